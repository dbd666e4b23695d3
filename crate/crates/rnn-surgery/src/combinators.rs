//! Weight-level combinators on recurrent nets: pad, compose, concat, lincomb.
//!
//! Each produces a new net whose evaluation equals the mathematical
//! combination of its operands exactly. Padding relies on carried hidden
//! values being post-ReLU (hence nonnegative), so the identity-carry layers
//! pass them through the activation unchanged; tests treat this as a proof
//! obligation.

use crate::error::{Result, SurgeryError};
use crate::linalg::Mat;
use crate::network::{RecurrentNet, RnnLayer};

fn require_no_clip(net: &RecurrentNet, what: &str) -> Result<()> {
    if net.output_clip.is_some() {
        return Err(SurgeryError::Invalid(format!(
            "{what} must not carry an output clip; clip is not a weight-level operation here"
        )));
    }
    Ok(())
}

/// Widens to W2 and deepens to L2 without changing the computed function.
/// Extra layers use the carry pattern (A=O, B=[[I,0],[0,O]], c=0).
pub fn pad(net: &RecurrentNet, w2: usize, l2: usize) -> Result<RecurrentNet> {
    let w = net.width();
    let l = net.depth();
    if w2 < w || l2 < l {
        return Err(SurgeryError::Invalid(format!(
            "pad target ({w2}, {l2}) smaller than current ({w}, {l})"
        )));
    }
    let mut layers: Vec<RnnLayer> = net
        .layers
        .iter()
        .map(|layer| {
            let mut c = layer.c.clone();
            c.resize(w2, 0.0);
            RnnLayer {
                a: layer.a.pad_to(w2, w2),
                b: layer.b.pad_to(w2, w2),
                c,
            }
        })
        .collect();
    let carry_b = Mat::identity(w).pad_to(w2, w2);
    for _ in l..l2 {
        layers.push(RnnLayer {
            a: Mat::zeros(w2, w2),
            b: carry_b.clone(),
            c: vec![0.0; w2],
        });
    }
    let mut out = RecurrentNet::new(
        net.embed.pad_to(w2, net.embed.cols),
        layers,
        net.project.pad_to(net.project.rows, w2),
    );
    out.output_clip = net.output_clip;
    Ok(out)
}

/// outer(inner(X)): width max(W1, W2), depth L1 + L2. The first outer layer's
/// input weight becomes B * (P_outer * Q_inner), fusing the token-wise linear
/// maps at the junction.
pub fn compose(outer: &RecurrentNet, inner: &RecurrentNet) -> Result<RecurrentNet> {
    if inner.output_dim() != outer.input_dim() {
        return Err(SurgeryError::Shape(format!(
            "inner output dim {} != outer input dim {}",
            inner.output_dim(),
            outer.input_dim()
        )));
    }
    require_no_clip(inner, "compose inner")?;
    let w = outer.width().max(inner.width());
    let inner = pad(inner, w, inner.depth())?;
    let outer_p = pad(outer, w, outer.depth())?;

    let junction = outer_p.embed.matmul(&inner.project);
    let mut layers = inner.layers.clone();
    let first = &outer_p.layers[0];
    layers.push(RnnLayer {
        a: first.a.clone(),
        b: first.b.matmul(&junction),
        c: first.c.clone(),
    });
    layers.extend(outer_p.layers[1..].iter().cloned());

    let mut out = RecurrentNet::new(inner.embed.clone(), layers, outer_p.project.clone());
    out.output_clip = outer.output_clip;
    Ok(out)
}

/// X -> (n1(X); n2(X)): width W1 + W2, depth max(L1, L2); the shorter operand
/// is padded in depth first.
pub fn concat(n1: &RecurrentNet, n2: &RecurrentNet) -> Result<RecurrentNet> {
    stack(n1, n2, None)
}

/// X -> c1*n1(X) + c2*n2(X): same block structure as concat, with projection
/// row (c1*Q1, c2*Q2).
pub fn lincomb(c1: f64, n1: &RecurrentNet, c2: f64, n2: &RecurrentNet) -> Result<RecurrentNet> {
    if n1.output_dim() != n2.output_dim() {
        return Err(SurgeryError::Shape(format!(
            "lincomb output dims differ: {} vs {}",
            n1.output_dim(),
            n2.output_dim()
        )));
    }
    stack(n1, n2, Some((c1, c2)))
}

fn stack(n1: &RecurrentNet, n2: &RecurrentNet, coeffs: Option<(f64, f64)>) -> Result<RecurrentNet> {
    if n1.input_dim() != n2.input_dim() {
        return Err(SurgeryError::Shape(format!(
            "input dims differ: {} vs {}",
            n1.input_dim(),
            n2.input_dim()
        )));
    }
    require_no_clip(n1, "concat/lincomb operand")?;
    require_no_clip(n2, "concat/lincomb operand")?;
    let l = n1.depth().max(n2.depth());
    let n1 = pad(n1, n1.width(), l)?;
    let n2 = pad(n2, n2.width(), l)?;
    let layers = n1
        .layers
        .iter()
        .zip(&n2.layers)
        .map(|(a, b)| RnnLayer {
            a: Mat::block_diag(&a.a, &b.a),
            b: Mat::block_diag(&a.b, &b.b),
            c: a.c.iter().chain(&b.c).copied().collect(),
        })
        .collect();
    let embed = Mat::vstack(&n1.embed, &n2.embed);
    let project = match coeffs {
        None => Mat::block_diag(&n1.project, &n2.project),
        Some((c1, c2)) => Mat::hstack(&n1.project.scale(c1), &n2.project.scale(c2)),
    };
    Ok(RecurrentNet::new(embed, layers, project))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{eval_rnn, TokenSequence};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn identity_net() -> RecurrentNet {
        RecurrentNet::new(
            Mat::identity(1),
            vec![RnnLayer {
                a: Mat::zeros(1, 1),
                b: Mat::identity(1),
                c: vec![0.0],
            }],
            Mat::identity(1),
        )
    }

    fn cumsum_net() -> RecurrentNet {
        RecurrentNet::new(
            Mat::identity(1),
            vec![RnnLayer {
                a: Mat::identity(1),
                b: Mat::identity(1),
                c: vec![0.0],
            }],
            Mat::identity(1),
        )
    }

    fn scale_net(s: f64) -> RecurrentNet {
        RecurrentNet::new(
            Mat::identity(1),
            vec![RnnLayer {
                a: Mat::zeros(1, 1),
                b: Mat::identity(1),
                c: vec![0.0],
            }],
            Mat::from_rows(&[vec![s]]),
        )
    }

    fn random_net(
        rng: &mut ChaCha8Rng,
        d_in: usize,
        d_out: usize,
        w: usize,
        l: usize,
    ) -> RecurrentNet {
        RecurrentNet::new(
            Mat::from_fn(w, d_in, |_, _| rng.gen_range(-1.0..1.0)),
            (0..l)
                .map(|_| RnnLayer {
                    a: Mat::from_fn(w, w, |_, _| rng.gen_range(-0.8..0.8)),
                    b: Mat::from_fn(w, w, |_, _| rng.gen_range(-1.0..1.0)),
                    c: (0..w).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                })
                .collect(),
            Mat::from_fn(d_out, w, |_, _| rng.gen_range(-1.0..1.0)),
        )
    }

    fn random_seq(rng: &mut ChaCha8Rng, d: usize, n: usize) -> TokenSequence {
        TokenSequence::from_tokens(
            &(0..n)
                .map(|_| (0..d).map(|_| rng.gen_range(0.0..1.0)).collect())
                .collect::<Vec<_>>(),
        )
    }

    #[test]
    fn pad_identity_preserved() {
        let p = pad(&identity_net(), 4, 3).unwrap();
        assert_eq!((p.width(), p.depth()), (4, 3));
        let out = eval_rnn(&p, &TokenSequence::scalar(&[0.3, 0.7])).unwrap();
        assert_eq!(out.data, vec![0.3, 0.7]);
    }

    #[test]
    fn pad_random_net_equivalence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = random_net(&mut rng, 2, 1, 2, 1);
        let padded = pad(&net, 5, 4).unwrap();
        for _ in 0..200 {
            let x = random_seq(&mut rng, 2, 4);
            let a = eval_rnn(&net, &x).unwrap();
            let b = eval_rnn(&padded, &x).unwrap();
            for (u, v) in a.data.iter().zip(&b.data) {
                assert!((u - v).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn pad_noop_keeps_weights() {
        let net = cumsum_net();
        let p = pad(&net, net.width(), net.depth()).unwrap();
        assert_eq!(net, p);
    }

    #[test]
    fn compose_identities() {
        let c = compose(&identity_net(), &identity_net()).unwrap();
        assert_eq!(c.depth(), 2);
        let out = eval_rnn(&c, &TokenSequence::scalar(&[0.4, 0.9])).unwrap();
        assert!((out[(0, 0)] - 0.4).abs() <= 1e-15);
        assert!((out[(0, 1)] - 0.9).abs() <= 1e-15);
    }

    #[test]
    fn compose_scale_after_cumsum() {
        let c = compose(&scale_net(2.0), &cumsum_net()).unwrap();
        let out = eval_rnn(&c, &TokenSequence::scalar(&[0.1, 0.2])).unwrap();
        assert!((out[(0, 0)] - 0.2).abs() <= 1e-15);
        assert!((out[(0, 1)] - 0.6).abs() <= 1e-15);
    }

    #[test]
    fn compose_depth_bookkeeping() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let inner = random_net(&mut rng, 2, 3, 4, 2);
        let outer = random_net(&mut rng, 3, 1, 2, 3);
        let c = compose(&outer, &inner).unwrap();
        assert_eq!(c.depth(), inner.depth() + outer.depth());
        assert_eq!(c.width(), inner.width().max(outer.width()));
    }

    #[test]
    fn compose_matches_nested_eval() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let inner = random_net(&mut rng, 2, 3, 3, 2);
            let outer = random_net(&mut rng, 3, 1, 2, 1);
            let c = compose(&outer, &inner).unwrap();
            for _ in 0..10 {
                let x = random_seq(&mut rng, 2, 3);
                let mid = eval_rnn(&inner, &x).unwrap();
                let expect = eval_rnn(&outer, &TokenSequence::new(mid)).unwrap();
                let got = eval_rnn(&c, &x).unwrap();
                for (u, v) in expect.data.iter().zip(&got.data) {
                    assert!((u - v).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn concat_identities() {
        let c = concat(&identity_net(), &identity_net()).unwrap();
        let out = eval_rnn(&c, &TokenSequence::scalar(&[0.5])).unwrap();
        assert_eq!((out[(0, 0)], out[(1, 0)]), (0.5, 0.5));
    }

    #[test]
    fn concat_random_nets_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n1 = random_net(&mut rng, 2, 1, 3, 1);
        let n2 = random_net(&mut rng, 2, 2, 2, 3);
        let c = concat(&n1, &n2).unwrap();
        assert_eq!(c.width(), n1.width() + n2.width());
        assert_eq!(c.depth(), n1.depth().max(n2.depth()));
        for _ in 0..200 {
            let x = random_seq(&mut rng, 2, 3);
            let a = eval_rnn(&n1, &x).unwrap();
            let b = eval_rnn(&n2, &x).unwrap();
            let got = eval_rnn(&c, &x).unwrap();
            for t in 0..3 {
                assert!((got[(0, t)] - a[(0, t)]).abs() <= 1e-12);
                assert!((got[(1, t)] - b[(0, t)]).abs() <= 1e-12);
                assert!((got[(2, t)] - b[(1, t)]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn lincomb_self_cancellation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = random_net(&mut rng, 1, 1, 3, 2);
        let z = lincomb(1.0, &n, -1.0, &n).unwrap();
        for _ in 0..100 {
            let x = random_seq(&mut rng, 1, 4);
            let out = eval_rnn(&z, &x).unwrap();
            for v in &out.data {
                assert!(v.abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn lincomb_identities() {
        let c = lincomb(2.0, &identity_net(), 3.0, &identity_net()).unwrap();
        let out = eval_rnn(&c, &TokenSequence::scalar(&[0.1])).unwrap();
        assert!((out[(0, 0)] - 0.5).abs() <= 1e-15);
        assert_eq!(c.width(), 2);
        assert_eq!(c.depth(), 1);
    }
}
