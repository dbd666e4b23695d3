//! The four weight-level combinators: pad, compose, concat, lincomb.
//! Each is checked against its mathematical definition on random sequences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rnn_surgery::combinators::{compose, concat, lincomb, pad};
use rnn_surgery::linalg::Mat;
use rnn_surgery::network::{eval_rnn, RecurrentNet, RnnLayer, TokenSequence};

fn random_rnn(d_x: usize, d_y: usize, w: usize, l: usize, rng: &mut ChaCha8Rng) -> RecurrentNet {
    let layers = (0..l)
        .map(|_| RnnLayer {
            a: Mat::from_fn(w, w, |_, _| 0.5 * rng.gen_range(-1.0..1.0)),
            b: Mat::from_fn(w, w, |_, _| 0.5 * rng.gen_range(-1.0..1.0)),
            c: (0..w).map(|_| 0.2 * rng.gen_range(-1.0..1.0)).collect(),
        })
        .collect();
    RecurrentNet::new(
        Mat::from_fn(w, d_x, |_, _| rng.gen_range(-1.0..1.0)),
        layers,
        Mat::from_fn(d_y, w, |_, _| rng.gen_range(-1.0..1.0)),
    )
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n1 = random_rnn(2, 1, 3, 2, &mut rng);
    let n2 = random_rnn(2, 1, 4, 1, &mut rng);
    let outer = random_rnn(1, 1, 3, 2, &mut rng);

    let padded = pad(&n1, 7, 4).unwrap();
    let composed = compose(&outer, &n1).unwrap();
    let cat = concat(&n1, &n2).unwrap();
    let lc = lincomb(0.7, &n1, -1.3, &n2).unwrap();
    println!(
        "pad (W,L) ({},{}) -> ({},{}); compose -> ({},{}); concat -> ({},{}); lincomb -> ({},{})",
        n1.width(),
        n1.depth(),
        padded.width(),
        padded.depth(),
        composed.width(),
        composed.depth(),
        cat.width(),
        cat.depth(),
        lc.width(),
        lc.depth(),
    );

    let mut worst = [0.0f64; 4];
    for _ in 0..100 {
        let toks: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let seq = TokenSequence::from_tokens(&toks);
        let y1 = eval_rnn(&n1, &seq).unwrap();
        let y2 = eval_rnn(&n2, &seq).unwrap();
        // inner output feeds outer as its token stream
        let mid = TokenSequence::new(y1.clone());
        for t in 0..5 {
            worst[0] = worst[0].max((eval_rnn(&padded, &seq).unwrap()[(0, t)] - y1[(0, t)]).abs());
            worst[1] = worst[1].max(
                (eval_rnn(&composed, &seq).unwrap()[(0, t)]
                    - eval_rnn(&outer, &mid).unwrap()[(0, t)])
                    .abs(),
            );
            let c = eval_rnn(&cat, &seq).unwrap();
            worst[2] = worst[2]
                .max((c[(0, t)] - y1[(0, t)]).abs())
                .max((c[(1, t)] - y2[(0, t)]).abs());
            worst[3] = worst[3].max(
                (eval_rnn(&lc, &seq).unwrap()[(0, t)] - (0.7 * y1[(0, t)] - 1.3 * y2[(0, t)]))
                    .abs(),
            );
        }
    }
    println!(
        "max defect over 100 sequences: pad {:.2e} compose {:.2e} concat {:.2e} lincomb {:.2e}",
        worst[0], worst[1], worst[2], worst[3]
    );
}
