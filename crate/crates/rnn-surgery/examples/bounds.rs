//! Capacity-bound and schedule arithmetic: covering-number growth and the
//! width/depth schedules with their excess-risk exponents.

use rnn_surgery::regression::{covering_bound, theory_schedule, ScheduleCase};

fn main() {
    println!("covering bound W^2 L^2 log(max{{W,L,2}}) log(Kn/delta), K=1, delta=0.1:");
    for (w, l, n) in [(2usize, 2usize, 10usize), (8, 3, 1000), (32, 8, 100_000)] {
        let b = covering_bound(w, l, 1.0, n, 0.1).unwrap();
        println!("  W={w:<3} L={l}  n={n:<7} -> {b:.2}");
    }

    println!("schedules for beta=1, d_x=1, N=2 (alpha at the upper endpoint):");
    let alpha = 2.0 / (2.0 * 2.0 + 4.0);
    for case in [
        ScheduleCase::ExpMixing,
        ScheduleCase::AlgMixing { r: 2.0 },
        ScheduleCase::Iid,
    ] {
        let a = match case {
            ScheduleCase::AlgMixing { r } => r * 2.0 / ((2.0 * r + 2.0) * 2.0 + 4.0 * r + 8.0),
            _ => alpha,
        };
        for n in [256usize, 1024, 4096] {
            let (w, l, rate) = theory_schedule(n, a, 1.0, 1, 2, case).unwrap();
            println!("  {case:?} n={n:<5} -> W={w:<3} L={l}  rate exponent {rate:.4}");
        }
    }
}
