//! Excess-risk rate experiment plumbing at toy scale: schedules from
//! theory_schedule, ERM training per (n, replication) job, log-log slope.
//! Small sizes keep this quick; the acceptance suite runs the real band.

use rnn_surgery::regression::{
    rate_experiment, MixingConfig, MixingKind, RegressionTask, TrainConfig,
};

fn main() {
    let template = TrainConfig {
        width: 1, // width/depth are overridden per n by the schedule
        depth: 1,
        clip: 1.0,
        learning_rate: 0.02,
        epochs: 300,
        restarts: 1,
        validation_fraction: 0.2,
        seed: 0,
    };
    let cfg = MixingConfig {
        kind: MixingKind::ExponentialMixing,
        rho: 0.8,
        d_x: 1,
        seed: 2024,
    };

    let task = RegressionTask::mean_sinusoid(1, 2, 0.1, 1.0);
    let res = rate_experiment(&task, &cfg, &[64, 128, 256], 3, &template).unwrap();
    println!(
        "mean-sinusoid, rho=0.8: slope {:.3} (theory {:.3}), degenerate: {}",
        res.slope, res.theory_exponent, res.degenerate
    );
    for r in &res.rows {
        println!(
            "  n={:<4} mean risk {:.5} +- {:.5}",
            r.n, r.mean_risk, r.std_risk
        );
    }
}
