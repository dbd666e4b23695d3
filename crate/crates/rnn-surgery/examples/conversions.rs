//! Round-trips between network families at the weight level.
//!
//! Unrolls a random RNN into an FNN and checks exact agreement on random
//! unbounded inputs, then wraps a random FNN into an RNN that reproduces it
//! at step t0 on [0,1] tokens.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rnn_surgery::conversion::{fnn_to_rnn, rnn_to_fnn};
use rnn_surgery::linalg::Mat;
use rnn_surgery::network::{
    eval_fnn, eval_rnn, FeedforwardNet, RecurrentNet, RnnLayer, TokenSequence,
};

fn random_rnn(d_x: usize, w: usize, l: usize, rng: &mut ChaCha8Rng) -> RecurrentNet {
    let mut u = |r: usize, c: usize| Mat::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
    let embed = u(w, d_x);
    let layers = (0..l)
        .map(|_| RnnLayer {
            a: Mat::from_fn(w, w, |_, _| rng.gen_range(-1.0..1.0)),
            b: Mat::from_fn(w, w, |_, _| rng.gen_range(-1.0..1.0)),
            c: (0..w).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        })
        .collect();
    let project = Mat::from_fn(1, w, |_, _| rng.gen_range(-1.0..1.0));
    RecurrentNet::new(embed, layers, project)
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    // RNN -> FNN: exact on all of R^{d_x * t0}
    let rnn = random_rnn(2, 4, 2, &mut rng);
    let t0 = 3;
    let fnn = rnn_to_fnn(&rnn, t0).unwrap();
    println!(
        "unrolled t0={t0}: width {} (rnn {}), relu depth {} (rnn {} per step)",
        fnn.width(),
        rnn.width(),
        fnn.relu_depth(),
        rnn.depth()
    );
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let toks: Vec<Vec<f64>> = (0..t0)
            .map(|_| (0..2).map(|_| rng.gen_range(-5.0..5.0)).collect())
            .collect();
        let seq = TokenSequence::from_tokens(&toks);
        let flat: Vec<f64> = toks.iter().flatten().copied().collect();
        let a = eval_rnn(&rnn, &seq).unwrap()[(0, t0 - 1)];
        let b = eval_fnn(&fnn, &flat).unwrap()[0];
        worst = worst.max((a - b).abs());
    }
    println!("max |rnn - unrolled fnn| over 200 draws: {worst:.3e}");

    // FNN -> RNN: exact at step t0 for tokens in [0,1]
    let fnn = FeedforwardNet::new(vec![
        (
            Mat::from_fn(5, 4, |_, _| rng.gen_range(-1.0..1.0)),
            vec![0.1; 5],
        ),
        (
            Mat::from_fn(1, 5, |_, _| rng.gen_range(-1.0..1.0)),
            vec![0.0],
        ),
    ]);
    let (t0, n_len) = (2, 4);
    let wrapped = fnn_to_rnn(&fnn, t0, n_len).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let toks: Vec<Vec<f64>> = (0..n_len)
            .map(|_| (0..2).map(|_| rng.gen()).collect())
            .collect();
        let seq = TokenSequence::from_tokens(&toks);
        let flat = seq.stack_prefix(t0);
        let a = eval_rnn(&wrapped, &seq).unwrap()[(0, t0 - 1)];
        let b = eval_fnn(&fnn, &flat).unwrap()[0];
        worst = worst.max((a - b).abs());
    }
    println!(
        "fnn->rnn at step {t0}: width {} depth {}, max diff {worst:.3e}",
        wrapped.width(),
        wrapped.depth()
    );
}
