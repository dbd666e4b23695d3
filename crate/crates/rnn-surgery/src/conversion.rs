//! FNN <-> RNN equivalence machinery.
//!
//! Four transformations, all at the weight level:
//!  * a binomial linear system (exact integer arithmetic) that drives the
//!    accumulator weights of the FNN -> MRNN construction,
//!  * fnn_to_mrnn: realizes an FNN over stacked tokens x[1..t0] as a modified
//!    recurrent net of width (d_x+1)W and depth N+L,
//!  * mrnn_to_rnn: removes activation masks with the z0/delta shift-and-scale
//!    trick, width W+1 and depth 2L, valid on a bounded input domain,
//!  * rnn_to_fnn: unrolls a recurrent net in time into an FNN of width
//!    (2t0-1)W with t0*L ReLU layers, exact on all real inputs.

use crate::error::{Result, SurgeryError};
use crate::linalg::Mat;
use crate::network::{
    bound_propagate, BoundTable, FeedforwardNet, ModifiedRecurrentNet, MrnnLayer, RecurrentNet,
    RnnLayer,
};

pub const MAX_BINOM_ORDER: usize = 20;

/// C(m, k) with the convention C(m, k) = 0 for k < 0, m < 0 or k > m.
fn binom(m: i64, k: i64) -> i128 {
    if k < 0 || m < 0 || k > m {
        return 0;
    }
    let k = k.min(m - k);
    let mut acc: i128 = 1;
    for i in 0..k {
        acc = acc * (m - i) as i128 / (i + 1) as i128;
    }
    acc
}

fn to_i64(v: i128, what: &str) -> Result<i64> {
    i64::try_from(v).map_err(|_| SurgeryError::Overflow(format!("{what} does not fit in 64 bits")))
}

fn check_order(n: usize) -> Result<()> {
    if n < 1 || n > MAX_BINOM_ORDER {
        return Err(SurgeryError::Overflow(format!(
            "binomial system order must be in [1, {MAX_BINOM_ORDER}], got {n}"
        )));
    }
    Ok(())
}

/// Lambda_n = {C(2n-i-j, n-i)}_{1<=i,j<=n}, exact integers.
pub fn binom_matrix(n: usize) -> Result<Vec<Vec<i64>>> {
    check_order(n)?;
    let n_i = n as i64;
    let mut out = vec![vec![0i64; n]; n];
    for i in 1..=n_i {
        for j in 1..=n_i {
            out[(i - 1) as usize][(j - 1) as usize] =
                to_i64(binom(2 * n_i - i - j, n_i - i), "binomial entry")?;
        }
    }
    Ok(out)
}

/// Lambda_n^{-1} = {sum_{k=1}^{min(i,j)} (-1)^{i+j} C(n-k, n-i) C(n-k, n-j)}.
pub fn binom_inverse(n: usize) -> Result<Vec<Vec<i64>>> {
    check_order(n)?;
    let n_i = n as i64;
    let mut out = vec![vec![0i64; n]; n];
    for i in 1..=n_i {
        for j in 1..=n_i {
            let sign: i128 = if (i + j) % 2 == 0 { 1 } else { -1 };
            let mut acc: i128 = 0;
            for k in 1..=i.min(j) {
                acc += binom(n_i - k, n_i - i) * binom(n_i - k, n_i - j);
            }
            out[(i - 1) as usize][(j - 1) as usize] = to_i64(sign * acc, "inverse entry")?;
        }
    }
    Ok(out)
}

/// The order-n binomial system with its exact inverse.
#[derive(Debug, Clone)]
pub struct BinomialSystem {
    pub n: usize,
    pub lambda: Vec<Vec<i64>>,
    pub lambda_inv: Vec<Vec<i64>>,
}

impl BinomialSystem {
    pub fn new(n: usize) -> Result<Self> {
        Ok(BinomialSystem {
            n,
            lambda: binom_matrix(n)?,
            lambda_inv: binom_inverse(n)?,
        })
    }

    /// Exact integer product lambda * lambda_inv.
    pub fn product(&self) -> Vec<Vec<i128>> {
        let n = self.n;
        let mut out = vec![vec![0i128; n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut acc: i128 = 0;
                for k in 0..n {
                    acc += self.lambda[i][k] as i128 * self.lambda_inv[k][j] as i128;
                }
                out[i][j] = acc;
            }
        }
        out
    }

    pub fn is_exact_identity(&self) -> bool {
        self.product().iter().enumerate().all(|(i, row)| {
            row.iter()
                .enumerate()
                .all(|(j, &v)| v == i128::from(i == j))
        })
    }
}

// ---------------------------------------------------------------------------
// FNN normalization helpers (internal)

/// Brings an FNN to depth >= 3 and uniform hidden width >= min_width.
///
/// Depth 1 nets get a sign-split front (relu(x), relu(-x)) plus an identity
/// carry, so the affine map applies to relu(x) - relu(-x) = x. Depth 2 nets
/// get one identity carry after the first hidden layer (post-ReLU values are
/// nonnegative, so relu acts as the identity on them).
fn normalize_fnn(fnn: &FeedforwardNet, min_width: usize) -> FeedforwardNet {
    let mut layers = fnn.layers.clone();
    if layers.len() == 1 {
        let (a, b) = layers.pop().unwrap();
        let d0 = a.cols;
        let split = Mat::vstack(&Mat::identity(d0), &Mat::identity(d0).scale(-1.0));
        let carry = Mat::identity(2 * d0);
        let recombine = Mat::hstack(&a, &a.scale(-1.0));
        layers = vec![
            (split, vec![0.0; 2 * d0]),
            (carry, vec![0.0; 2 * d0]),
            (recombine, b),
        ];
    } else if layers.len() == 2 {
        let w1 = layers[0].0.rows;
        layers.insert(1, (Mat::identity(w1), vec![0.0; w1]));
    }
    let w = layers[..layers.len() - 1]
        .iter()
        .map(|(a, _)| a.rows)
        .max()
        .unwrap()
        .max(min_width)
        .max(1);
    let last = layers.len() - 1;
    let mut out = Vec::with_capacity(layers.len());
    for (l, (a, b)) in layers.into_iter().enumerate() {
        let rows = if l < last { w } else { a.rows };
        let cols = if l == 0 { a.cols } else { w };
        let mut b2 = b;
        b2.resize(rows, 0.0);
        out.push((a.pad_to(rows, cols), b2));
    }
    FeedforwardNet::new(out)
}

// ---------------------------------------------------------------------------
// FNN -> MRNN

/// Per-copy, per-layer accumulator biases b_{w,l} = sum_k lambda_{k,l} A_w[k],
/// where A_w[k] for k = N-t0+j is row w, block j of the FNN's first layer
/// (blocks of width d_x), and zero for k <= N-t0.
fn step1_biases(
    first_layer: &Mat,
    d_x: usize,
    n_len: usize,
    t0: usize,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let lam_inv = binom_inverse(n_len)?;
    let w = first_layer.rows;
    // targets[w][k-1] in R^{d_x}, 1-based k
    let mut targets = vec![vec![vec![0.0; d_x]; n_len]; w];
    for wi in 0..w {
        for j in 1..=t0 {
            let k = n_len - t0 + j;
            for d in 0..d_x {
                targets[wi][k - 1][d] = first_layer[(wi, (j - 1) * d_x + d)];
            }
        }
    }
    // biases[w][l-1] in R^{d_x}, 1-based layer l
    let mut biases = vec![vec![vec![0.0; d_x]; n_len]; w];
    for wi in 0..w {
        for l in 1..=n_len {
            for k in 1..=n_len {
                let lam = lam_inv[k - 1][l - 1] as f64;
                if lam == 0.0 {
                    continue;
                }
                for d in 0..d_x {
                    biases[wi][l - 1][d] += lam * targets[wi][k - 1][d];
                }
            }
        }
    }
    Ok(biases)
}

/// Realizes `fnn` (input x[1..t0] stacked) as a modified recurrent net of
/// width (d_x+1)W and depth N+L: N linear accumulator layers, one activated
/// collection layer, then the remaining FNN layers applied token-wise.
/// Output at step t0 equals the FNN on vec(x[1:t0]) for all real sequences.
pub fn fnn_to_mrnn(fnn: &FeedforwardNet, t0: usize, n_len: usize) -> Result<ModifiedRecurrentNet> {
    if t0 < 1 || t0 > n_len {
        return Err(SurgeryError::Invalid(format!(
            "t0 = {t0} out of range 1..={n_len}"
        )));
    }
    if fnn.input_dim() % t0 != 0 {
        return Err(SurgeryError::Shape(format!(
            "fnn input dim {} not divisible by t0 = {t0}",
            fnn.input_dim()
        )));
    }
    let d_x = fnn.input_dim() / t0;
    let d_y = fnn.output_dim();
    let fnn = normalize_fnn(fnn, d_y);
    let w = fnn.width();
    let depth = fnn.depth();
    let cell = d_x + 1;
    let big = cell * w;

    // Embedding: copy w receives (x; 0).
    let mut embed = Mat::zeros(big, d_x);
    for wi in 0..w {
        for d in 0..d_x {
            embed[(wi * cell + d, d)] = 1.0;
        }
    }

    let biases = step1_biases(&fnn.layers[0].0, d_x, n_len, t0)?;
    let mut layers: Vec<MrnnLayer> = Vec::with_capacity(n_len + depth);

    // Step 1: N linear accumulator layers (empty mask). Per copy:
    // A keeps the accumulator, B passes the token and adds b_l . x.
    for l in 0..n_len {
        let mut a = Mat::zeros(big, big);
        let mut b = Mat::zeros(big, big);
        for wi in 0..w {
            let o = wi * cell;
            a[(o + d_x, o + d_x)] = 1.0;
            for d in 0..d_x {
                b[(o + d, o + d)] = 1.0;
                b[(o + d_x, o + d)] = biases[wi][l][d];
            }
            b[(o + d_x, o + d_x)] = 1.0;
        }
        layers.push(MrnnLayer {
            a,
            b,
            c: vec![0.0; big],
            mask: vec![false; big],
        });
    }

    // Step 2: collection layer with full activation; row i picks copy i's
    // accumulator, bias is the first FNN layer's bias.
    {
        let mut b = Mat::zeros(big, big);
        let mut c = vec![0.0; big];
        for wi in 0..w {
            b[(wi, wi * cell + d_x)] = 1.0;
            c[wi] = fnn.layers[0].1[wi];
        }
        layers.push(MrnnLayer {
            a: Mat::zeros(big, big),
            b,
            c,
            mask: vec![true; big],
        });
    }

    // Step 3: remaining FNN layers token-wise in the first W (or d_y) slots.
    for l in 1..depth {
        let (al, bl) = &fnn.layers[l];
        let b = al.pad_to(big, big);
        let mut c = vec![0.0; big];
        c[..bl.len()].copy_from_slice(bl);
        let mask = vec![l < depth - 1; big];
        layers.push(MrnnLayer {
            a: Mat::zeros(big, big),
            b,
            c,
            mask,
        });
    }

    let mut project = Mat::zeros(d_y, big);
    for i in 0..d_y {
        project[(i, i)] = 1.0;
    }
    Ok(ModifiedRecurrentNet::new(embed, layers, project))
}

// ---------------------------------------------------------------------------
// MRNN -> RNN (z0/delta de-modification)

struct LayerPlan {
    perm: Vec<usize>, // perm[new] = old, masked units first
    k: usize,
    z0: f64,
    delta: f64,
}

fn plan_layer(layer: &MrnnLayer, bounds: &BoundTable, l: usize) -> Result<LayerPlan> {
    let w = layer.mask.len();
    let mut perm: Vec<usize> = (0..w).filter(|&i| layer.mask[i]).collect();
    let k = perm.len();
    perm.extend((0..w).filter(|&i| !layer.mask[i]));

    let m = BoundTable::abs_bound(&[bounds.input_part[l].clone()])
        .max(BoundTable::abs_bound(&[bounds.pre[l].clone()]));
    if !m.is_finite() {
        return Err(SurgeryError::Domain(format!(
            "layer {l} activation bound is not finite"
        )));
    }
    let z0 = m + 1.0;
    let mut delta = 1.0;
    let mut tries = 0;
    while z0 - delta * m < 0.0 {
        delta *= 0.5;
        tries += 1;
        if tries > 200 {
            return Err(SurgeryError::Domain(
                "delta search failed to certify".into(),
            ));
        }
    }
    Ok(LayerPlan { perm, k, z0, delta })
}

/// Decode matrix (W x (W+1)) in permuted coordinates: identity on the masked
/// part, (x - z0)/delta on the unmasked part using the constant last slot.
fn decode_permuted(plan: &LayerPlan, w: usize) -> Mat {
    let mut m = Mat::zeros(w, w + 1);
    for i in 0..plan.k {
        m[(i, i)] = 1.0;
    }
    for i in plan.k..w {
        m[(i, i)] = 1.0 / plan.delta;
        // the last state slot holds the constant z0
        m[(i, w)] = -1.0 / plan.delta;
    }
    m
}

/// Decode back to original unit order: row `old` of the result is row
/// `new` of the permuted decode, where perm[new] = old.
fn decode_original(plan: &LayerPlan, w: usize) -> Mat {
    let dp = decode_permuted(plan, w);
    let mut m = Mat::zeros(w, w + 1);
    for (new, &old) in plan.perm.iter().enumerate() {
        for j in 0..=w {
            m[(old, j)] = dp[(new, j)];
        }
    }
    m
}

fn permute_rows(m: &Mat, perm: &[usize]) -> Mat {
    let mut out = Mat::zeros(m.rows, m.cols);
    for (new, &old) in perm.iter().enumerate() {
        for j in 0..m.cols {
            out[(new, j)] = m[(old, j)];
        }
    }
    out
}

/// Removes activation masks: each modified layer becomes two ordinary
/// recurrent layers of width W+1. Valid for inputs whose tokens stay inside
/// `domain` for up to `horizon` steps; z0 is taken from propagated interval
/// bounds (plus margin 1), delta is halved from 1 until the bounds certify
/// z0 + delta*(pre-activation) >= 0 wherever ReLU must act as the identity.
pub fn mrnn_to_rnn(
    net: &ModifiedRecurrentNet,
    domain: &[(f64, f64)],
    horizon: usize,
) -> Result<RecurrentNet> {
    let w = net.width();
    let bounds = bound_propagate(net, domain, horizon)?;
    let plans: Vec<LayerPlan> = net
        .layers
        .iter()
        .enumerate()
        .map(|(l, layer)| plan_layer(layer, &bounds, l))
        .collect::<Result<Vec<_>>>()?;

    let big = w + 1;
    let mut layers: Vec<RnnLayer> = Vec::with_capacity(2 * net.layers.len());

    for (l, (layer, plan)) in net.layers.iter().zip(&plans).enumerate() {
        // First stage: stateless shifted copy of the input part,
        // sigma(z0 + delta * perm(B u + c)).
        let pb = permute_rows(&layer.b, &plan.perm); // W x W
        let b1 = if l == 0 {
            pb.scale(plan.delta).pad_to(big, big)
        } else {
            let dec = decode_original(&plans[l - 1], w); // W x (W+1)
            pb.scale(plan.delta).matmul(&dec).pad_to(big, big)
        };
        let mut c1 = vec![plan.z0; big];
        for (new, &old) in plan.perm.iter().enumerate() {
            c1[new] += plan.delta * layer.c[old];
        }
        layers.push(RnnLayer {
            a: Mat::zeros(big, big),
            b: b1,
            c: c1,
        });

        // Second stage: recurrent. Masked rows recover the true
        // pre-activation; unmasked rows keep the z0 + delta encoding.
        // conjugate A: (Pi A Pi^T)[i][j] = A[perm[i]][perm[j]]
        let pa = permute_rows(&layer.a, &plan.perm);
        let mut paa = Mat::zeros(w, w);
        for i in 0..w {
            for (newj, &oldj) in plan.perm.iter().enumerate() {
                paa[(i, newj)] = pa[(i, oldj)];
            }
        }
        let core = paa.pad_to(big, big);
        let dec_full = decode_permuted(plan, w).pad_to(big, big);
        let mut a2 = core.matmul(&dec_full);
        for i in plan.k..w {
            for j in 0..big {
                a2[(i, j)] *= plan.delta;
            }
        }
        let mut b2 = Mat::zeros(big, big);
        let mut c2 = vec![0.0; big];
        for i in 0..big {
            b2[(i, i)] = if i < plan.k { 1.0 / plan.delta } else { 1.0 };
        }
        for i in 0..plan.k {
            c2[i] = -plan.z0 / plan.delta;
        }
        layers.push(RnnLayer {
            a: a2,
            b: b2,
            c: c2,
        });
    }

    let mut embed = Mat::zeros(big, net.input_dim());
    embed.set_block(0, 0, &net.embed);
    let project = net
        .project
        .matmul(&decode_original(plans.last().unwrap(), w));
    let mut out = RecurrentNet::new(embed, layers, project);
    out.output_clip = net.output_clip;
    Ok(out)
}

// ---------------------------------------------------------------------------
// RNN -> FNN (unrolling in time)

/// Unrolls `rnn` at step t0 into an FNN over vec(x[1:t0]): width (2t0-1)W,
/// t0*L ReLU layers plus the final affine projection. Exact on all real
/// sequences; carries use relu(x) - relu(-x) = x.
pub fn rnn_to_fnn(rnn: &RecurrentNet, t0: usize) -> Result<FeedforwardNet> {
    if t0 < 1 {
        return Err(SurgeryError::Invalid("t0 must be >= 1".into()));
    }
    if rnn.output_clip.is_some() {
        return Err(SurgeryError::Invalid(
            "rnn_to_fnn does not support output-clipped nets".into(),
        ));
    }
    let w = rnn.width();
    let d_x = rnn.input_dim();
    let wide = (2 * t0 - 1) * w;

    let mut layers: Vec<(Mat, Vec<f64>)> = Vec::with_capacity(t0 * rnn.layers.len() + 1);
    // Pending linear map feeding the next block's first stage: initially the
    // per-token embedding, afterwards the reconstruction of the previous
    // block's outputs. Maps the previous representation to t0 stacked blocks.
    let mut pending: Mat = {
        let mut p = Mat::zeros(t0 * w, t0 * d_x);
        for t in 0..t0 {
            p.set_block(t * w, t * d_x, &rnn.embed);
        }
        p
    };

    for layer in &rnn.layers {
        // Stage 1: compute R[1] and sign-split carries of u[2..t0].
        let mut f1 = Mat::zeros(wide, t0 * w);
        f1.set_block(0, 0, &layer.b);
        for j in 1..t0 {
            let base = w + 2 * (j - 1) * w;
            f1.set_block(base, j * w, &Mat::identity(w));
            f1.set_block(base + w, j * w, &Mat::identity(w).scale(-1.0));
        }
        let mut b1 = vec![0.0; wide];
        b1[..w].copy_from_slice(&layer.c);
        layers.push((f1.matmul(&pending), b1));

        // Stages 2..t0: advance one time step each.
        for i in 2..=t0 {
            let mut f = Mat::zeros(wide, wide);
            let pivot = (2 * i - 4) * w; // R[i-1] slot
            for blk in 0..2 * (i - 2) {
                f.set_block(blk * w, blk * w, &Mat::identity(w));
            }
            f.set_block(pivot, pivot, &Mat::identity(w));
            f.set_block(pivot + w, pivot, &Mat::identity(w).scale(-1.0));
            let r_out = (2 * i - 2) * w;
            f.set_block(r_out, pivot, &layer.a);
            f.set_block(r_out, pivot + w, &layer.b);
            f.set_block(r_out, pivot + 2 * w, &layer.b.scale(-1.0));
            for blk in (2 * i - 1)..(2 * t0 - 1) {
                f.set_block(blk * w, blk * w, &Mat::identity(w));
            }
            let mut b = vec![0.0; wide];
            b[r_out..r_out + w].copy_from_slice(&layer.c);
            layers.push((f, b));
        }

        // Reconstruction R[j] = relu(R[j]) - relu(-R[j]) for j < t0; R[t0] direct.
        let mut rec = Mat::zeros(t0 * w, wide);
        for j in 0..t0 - 1 {
            rec.set_block(j * w, 2 * j * w, &Mat::identity(w));
            rec.set_block(j * w, (2 * j + 1) * w, &Mat::identity(w).scale(-1.0));
        }
        rec.set_block((t0 - 1) * w, (2 * t0 - 2) * w, &Mat::identity(w));
        pending = rec;
    }

    // Final affine layer: project the last block's R[t0].
    let mut select = Mat::zeros(rnn.output_dim(), wide);
    select.set_block(0, (2 * t0 - 2) * w, &rnn.project);
    layers.push((select, vec![0.0; rnn.output_dim()]));

    Ok(FeedforwardNet::new(layers))
}

/// FNN -> RNN on [0,1] tokens: fnn_to_mrnn followed by mrnn_to_rnn.
/// Width <= (d_x+1)W + 1, depth 2(N+L).
pub fn fnn_to_rnn(fnn: &FeedforwardNet, t0: usize, n_len: usize) -> Result<RecurrentNet> {
    let mrnn = fnn_to_mrnn(fnn, t0, n_len)?;
    let d_x = mrnn.input_dim();
    mrnn_to_rnn(&mrnn, &vec![(0.0, 1.0); d_x], n_len)
}
