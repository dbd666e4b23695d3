//! Simultaneous approximation of past-dependent target sequences.
//!
//! The assembly: for each step t, an interpolation FNN for the step's target
//! is unrolled into an RNN, truncated at K, multiplied by an exact step
//! indicator through a ReLU product network, and the terms are summed. The
//! result is one recurrent net that is accurate at every step at once.

use std::sync::Arc;

use rayon::prelude::*;

use crate::combinators::{compose, concat, lincomb};
use crate::conversion::fnn_to_rnn;
use crate::error::{Result, SurgeryError};
use crate::linalg::Mat;
use crate::network::{eval_fnn_batch, eval_rnn_batch, FeedforwardNet, RecurrentNet, RnnLayer};

/// A target f: [0,1]^{d_x * t} -> R^{d_y} that depends on the first t tokens
/// only. `k` bounds both |f| and its Hoelder constant.
#[derive(Clone)]
pub struct PastDependentTarget {
    pub t: usize,
    pub d_x: usize,
    pub d_y: usize,
    pub beta: f64,
    pub k: f64,
    pub f: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
}

impl std::fmt::Debug for PastDependentTarget {
    fn fmt(&self, fm: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fm.debug_struct("PastDependentTarget")
            .field("t", &self.t)
            .field("d_x", &self.d_x)
            .field("d_y", &self.d_y)
            .field("beta", &self.beta)
            .field("k", &self.k)
            .finish_non_exhaustive()
    }
}

impl PastDependentTarget {
    pub fn new(
        t: usize,
        d_x: usize,
        d_y: usize,
        beta: f64,
        k: f64,
        f: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
    ) -> Result<Self> {
        if t < 1 || d_x < 1 || d_y < 1 {
            return Err(SurgeryError::Invalid("t, d_x, d_y must be >= 1".into()));
        }
        if !(beta > 0.0) || !(k > 0.0) {
            return Err(SurgeryError::Invalid("beta and k must be positive".into()));
        }
        Ok(PastDependentTarget {
            t,
            d_x,
            d_y,
            beta,
            k,
            f,
        })
    }

    pub fn input_len(&self) -> usize {
        self.d_x * self.t
    }

    /// Spot-checks |f| <= k on a tensor grid with `ppa` points per axis.
    pub fn spot_check_bound(&self, ppa: usize) -> Result<()> {
        let d = self.input_len();
        let total = checked_grid_size(ppa, d, 1_000_000)?;
        for idx in 0..total {
            let x = grid_point(idx, ppa, d);
            let y = (self.f)(&x);
            if y.len() != self.d_y {
                return Err(SurgeryError::Shape(format!(
                    "target returned {} values, d_y = {}",
                    y.len(),
                    self.d_y
                )));
            }
            for v in &y {
                if !(v.abs() <= self.k + 1e-12) {
                    return Err(SurgeryError::Domain(format!(
                        "target exceeds bound k = {} at a grid point (value {v})",
                        self.k
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Grid parameter `j` drives width, `i_d` drives depth of the product net.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ApproxBudget {
    pub j: usize,
    pub i_d: usize,
}

impl ApproxBudget {
    pub fn new(j: usize, i_d: usize) -> Result<Self> {
        if j < 1 || i_d < 1 {
            return Err(SurgeryError::Invalid(
                "budget needs j >= 1 and i_d >= 1".into(),
            ));
        }
        Ok(ApproxBudget { j, i_d })
    }

    /// Effective (even) tooth count of the sawtooth stages.
    pub fn teeth(&self) -> usize {
        2 * self.j.div_ceil(2)
    }
}

fn checked_grid_size(ppa: usize, d: usize, cap: usize) -> Result<usize> {
    if ppa < 2 {
        return Err(SurgeryError::Invalid(
            "need at least 2 points per axis".into(),
        ));
    }
    let mut total: usize = 1;
    for _ in 0..d {
        total = total
            .checked_mul(ppa)
            .filter(|&t| t <= cap)
            .ok_or_else(|| {
                SurgeryError::Domain(format!(
                    "grid {ppa}^{d} exceeds the {cap}-point cap; use a coarser grid"
                ))
            })?;
    }
    Ok(total)
}

/// Point `idx` of the tensor grid {0, 1/(ppa-1), ..., 1}^d, mixed-radix order.
fn grid_point(idx: usize, ppa: usize, d: usize) -> Vec<f64> {
    let mut x = Vec::with_capacity(d);
    let mut rest = idx;
    for _ in 0..d {
        x.push((rest % ppa) as f64 / (ppa - 1) as f64);
        rest /= ppa;
    }
    x
}

/// Width-3, depth-2 recurrent net whose output at step t is exactly
/// delta_{t,t0}: a counter layer followed by sigma(t-t0+1) - 2 sigma(t-t0)
/// + sigma(t-t0-1). All arithmetic is on small integers, so exact.
pub fn indicator_rnn(t0: usize, n_len: usize, d_x: usize) -> Result<RecurrentNet> {
    if t0 < 1 || t0 > n_len {
        return Err(SurgeryError::Invalid(format!(
            "t0 = {t0} out of range 1..={n_len}"
        )));
    }
    if d_x < 1 {
        return Err(SurgeryError::Invalid("d_x must be >= 1".into()));
    }
    let mut a1 = Mat::zeros(3, 3);
    a1[(0, 0)] = 1.0;
    let mut b2 = Mat::zeros(3, 3);
    for i in 0..3 {
        b2[(i, 0)] = 1.0;
    }
    let t0f = t0 as f64;
    let layers = vec![
        RnnLayer {
            a: a1,
            b: Mat::zeros(3, 3),
            c: vec![1.0, 0.0, 0.0],
        },
        RnnLayer {
            a: Mat::zeros(3, 3),
            b: b2,
            c: vec![-t0f + 1.0, -t0f, -t0f - 1.0],
        },
    ];
    let q = Mat::from_rows(&[vec![1.0, -2.0, 1.0]]);
    Ok(RecurrentNet::new(Mat::zeros(3, d_x), layers, q))
}

/// Token-wise exact clipping to [-k, k] in every coordinate:
/// chi_k(x) = sigma(x) - sigma(-x) - sigma(x-k) + sigma(-x-k).
pub fn trunc_net(k: f64, d_y: usize) -> Result<RecurrentNet> {
    if !(k > 0.0) {
        return Err(SurgeryError::Invalid(
            "clip bound k must be positive".into(),
        ));
    }
    if d_y < 1 {
        return Err(SurgeryError::Invalid("d_y must be >= 1".into()));
    }
    let w = 4 * d_y;
    let mut p = Mat::zeros(w, d_y);
    let mut c = vec![0.0; w];
    let mut q = Mat::zeros(d_y, w);
    for i in 0..d_y {
        let r = 4 * i;
        p[(r, i)] = 1.0;
        p[(r + 1, i)] = -1.0;
        p[(r + 2, i)] = 1.0;
        p[(r + 3, i)] = -1.0;
        c[r + 2] = -k;
        c[r + 3] = -k;
        q[(i, r)] = 1.0;
        q[(i, r + 1)] = -1.0;
        q[(i, r + 2)] = -1.0;
        q[(i, r + 3)] = 1.0;
    }
    let layers = vec![RnnLayer {
        a: Mat::zeros(w, w),
        b: Mat::identity(w),
        c,
    }];
    Ok(RecurrentNet::new(p, layers, q))
}

/// Wraps a feedforward net (depth >= 2) into a stateless recurrent net that
/// applies it to every token independently. One extra unit carries the
/// constant 1 so the final affine layer's bias survives into the projection.
pub fn tokenwise_rnn(fnn: &FeedforwardNet) -> Result<RecurrentNet> {
    let depth = fnn.depth();
    if depth < 2 {
        return Err(SurgeryError::Invalid(
            "token-wise wrapping needs depth >= 2".into(),
        ));
    }
    let d_in = fnn.input_dim();
    let w = fnn.width().max(d_in) + 1;
    let cst = w - 1;

    let mut embed = Mat::zeros(w, d_in);
    embed.set_block(0, 0, &Mat::identity(d_in));

    let mut layers = Vec::with_capacity(depth - 1);
    for (l, (a, bias)) in fnn.layers[..depth - 1].iter().enumerate() {
        let mut b = Mat::zeros(w, w);
        b.set_block(0, 0, a);
        let mut c = vec![0.0; w];
        c[..bias.len()].copy_from_slice(bias);
        if l == 0 {
            // seed the constant channel; later layers copy it
            c[cst] = 1.0;
        } else {
            b[(cst, cst)] = 1.0;
        }
        layers.push(RnnLayer {
            a: Mat::zeros(w, w),
            b,
            c,
        });
    }

    let (a_last, b_last) = &fnn.layers[depth - 1];
    let mut q = Mat::zeros(fnn.output_dim(), w);
    q.set_block(0, 0, a_last);
    for (i, v) in b_last.iter().enumerate() {
        q[(i, cst)] = *v;
    }
    Ok(RecurrentNet::new(embed, layers, q))
}

/// Piecewise-linear coefficients: values `v` at knots i/j (i = 0..=j, v[0]
/// must be 0) turned into gammas with f(s) = sum_i gamma[i] sigma(s - i/j).
fn pl_gammas(values: &[f64]) -> Vec<f64> {
    let j = values.len() - 1;
    let slopes: Vec<f64> = (0..j)
        .map(|i| (values[i + 1] - values[i]) * j as f64)
        .collect();
    let mut g = vec![slopes[0]];
    for i in 1..j {
        g.push(slopes[i] - slopes[i - 1]);
    }
    g
}

/// Token-wise product net: input (u, v) with u in [-k,k]^{d_y}, v in [0,1],
/// output approximately u*v coordinate-wise. Built from iterated sawtooth
/// squaring: each depth level removes one scale of the interpolation error of
/// z^2, with `teeth` breakpoints shared per level. Width grows with j, depth
/// with i_d; sup-error <= product_error_bound.
pub fn product_net(k: f64, budget: &ApproxBudget, d_y: usize) -> Result<RecurrentNet> {
    if !(k > 0.0) {
        return Err(SurgeryError::Invalid(
            "factor bound k must be positive".into(),
        ));
    }
    if d_y < 1 {
        return Err(SurgeryError::Invalid("d_y must be >= 1".into()));
    }
    let jf = budget.teeth();
    let jn = jf as f64;
    let i_d = budget.i_d;

    // w(s) = s - interp(s^2) on the knot grid; tau = the matching sawtooth.
    let w_vals: Vec<f64> = (0..=jf)
        .map(|i| {
            let s = i as f64 / jn;
            s - s * s
        })
        .collect();
    let tau_vals: Vec<f64> = (0..=jf)
        .map(|i| if i % 2 == 1 { 1.0 } else { 0.0 })
        .collect();
    let gw = pl_gammas(&w_vals);
    let gt = pl_gammas(&tau_vals);

    let hw = 1 + 3 * d_y * (jf + 1);
    let base = |q: usize, s: usize| 1 + (q * 3 + s) * (jf + 1);
    let knot = |i: usize| i as f64 / jn;

    let mut layers: Vec<(Mat, Vec<f64>)> = Vec::with_capacity(i_d + 1);

    // Layer 1: from the raw (u, v) token. Square arguments per coordinate q:
    // s=0: ((u+k)/(2k) + v)/2, s=1: (u+k)/(2k), s=2: v.
    {
        let mut a = Mat::zeros(hw, d_y + 1);
        let mut c = vec![0.0; hw];
        a[(0, d_y)] = 1.0;
        for q in 0..d_y {
            for s in 0..3 {
                let (cu, cv, cb) = match s {
                    0 => (1.0 / (4.0 * k), 0.5, 0.25),
                    1 => (1.0 / (2.0 * k), 0.0, 0.5),
                    _ => (0.0, 1.0, 0.0),
                };
                let b0 = base(q, s);
                a[(b0, q)] = cu;
                a[(b0, d_y)] = cv;
                c[b0] = cb;
                for i in 0..jf {
                    a[(b0 + 1 + i, q)] = cu;
                    a[(b0 + 1 + i, d_y)] = cv;
                    c[b0 + 1 + i] = cb - knot(i);
                }
            }
        }
        layers.push((a, c));
    }

    // Levels 2..=i_d: acc_m = acc-carry - scale_m * w(t), t_m = tau(t).
    for m in 2..=i_d {
        let scale = jn.powi(-2 * (m as i32 - 2));
        let mut a = Mat::zeros(hw, hw);
        let mut c = vec![0.0; hw];
        a[(0, 0)] = 1.0;
        for q in 0..d_y {
            for s in 0..3 {
                let b0 = base(q, s);
                a[(b0, b0)] = 1.0;
                for i in 0..jf {
                    a[(b0, b0 + 1 + i)] = -scale * gw[i];
                }
                for i in 0..jf {
                    for kk in 0..jf {
                        a[(b0 + 1 + i, b0 + 1 + kk)] = gt[kk];
                    }
                    c[b0 + 1 + i] = -knot(i);
                }
            }
        }
        layers.push((a, c));
    }

    // Output: u_q * v = 2k (2 s1 - s2/2 - s3/2) - k v on the final acc's.
    {
        let scale = jn.powi(-2 * (i_d as i32 - 1));
        let mut a = Mat::zeros(d_y, hw);
        for q in 0..d_y {
            a[(q, 0)] = -k;
            for (s, ws) in [(0usize, 4.0 * k), (1, -k), (2, -k)] {
                let b0 = base(q, s);
                a[(q, b0)] += ws;
                for i in 0..jf {
                    a[(q, b0 + 1 + i)] -= ws * scale * gw[i];
                }
            }
        }
        layers.push((a, vec![0.0; d_y]));
    }

    tokenwise_rnn(&FeedforwardNet::new(layers))
}

/// Guaranteed sup-error of `product_net` on its contract domain.
pub fn product_error_bound(k: f64, budget: &ApproxBudget) -> f64 {
    1.5 * k * (budget.teeth() as f64).powi(-2 * budget.i_d as i32)
}

/// Hat basis on the uniform grid with `r` cells per axis, realized with ReLU:
/// phi_g(x) = sigma(1 - max_i sigma(r x_i - g_i) - max_i sigma(g_i - r x_i)).
/// The phi_g form a partition of unity on [0,1]^d and reproduce linear
/// functions (piecewise-linear interpolation on the standard simplicial
/// subdivision), giving sup-error O(h^2) on C^2 targets, O(K h^min(beta,1))
/// on Hoelder targets.
fn holder_layers(target: &PastDependentTarget, r: usize, d: usize) -> Result<Vec<(Mat, Vec<f64>)>> {
    let nodes = checked_grid_size(r + 1, d, 1_000_000)?;
    let w1 = 2 * d * (r + 1);
    let idx1 = |i: usize, v: usize, s: usize| (i * (r + 1) + v) * 2 + s;
    let rf = r as f64;

    // shared first layer: sigma(+-(r x_i - v)) for every axis and knot
    let mut a1 = Mat::zeros(w1, d);
    let mut c1 = vec![0.0; w1];
    for i in 0..d {
        for v in 0..=r {
            a1[(idx1(i, v, 0), i)] = rf;
            c1[idx1(i, v, 0)] = -(v as f64);
            a1[(idx1(i, v, 1), i)] = -rf;
            c1[idx1(i, v, 1)] = v as f64;
        }
    }

    let digits = |n: usize| {
        let mut g = Vec::with_capacity(d);
        let mut rest = n;
        for _ in 0..d {
            g.push(rest % (r + 1));
            rest /= r + 1;
        }
        g
    };

    let mut layers = vec![(a1, c1)];

    if d >= 2 {
        // running max over axes: m_j = sigma(m_{j-1}) + sigma(s_j - m_{j-1}),
        // with the shared units carried along (all are nonnegative).
        for j in 1..d {
            let prev_w = if j == 1 { w1 } else { w1 + 4 * nodes };
            let mut a = Mat::zeros(w1 + 4 * nodes, prev_w);
            for rr in 0..w1 {
                a[(rr, rr)] = 1.0;
            }
            for n in 0..nodes {
                let g = digits(n);
                for s in 0..2 {
                    let cpos = w1 + 4 * n + 2 * s;
                    let prev: Vec<usize> = if j == 1 {
                        vec![idx1(0, g[0], s)]
                    } else {
                        vec![cpos, cpos + 1]
                    };
                    for &p in &prev {
                        a[(cpos, p)] = 1.0;
                        a[(cpos + 1, p)] = -1.0;
                    }
                    a[(cpos + 1, idx1(j, g[j], s))] = 1.0;
                }
            }
            let c = vec![0.0; w1 + 4 * nodes];
            layers.push((a, c));
        }
    }

    // hat layer
    let prev_w = if d == 1 { w1 } else { w1 + 4 * nodes };
    let mut aphi = Mat::zeros(nodes, prev_w);
    let cphi = vec![1.0; nodes];
    for n in 0..nodes {
        if d == 1 {
            aphi[(n, idx1(0, n, 0))] = -1.0;
            aphi[(n, idx1(0, n, 1))] = -1.0;
        } else {
            for off in 0..4 {
                aphi[(n, w1 + 4 * n + off)] = -1.0;
            }
        }
    }
    layers.push((aphi, cphi));

    // output: weighted sum of hats by the node values of the target
    let mut aout = Mat::zeros(target.d_y, nodes);
    for n in 0..nodes {
        let g = digits(n);
        let x: Vec<f64> = g.iter().map(|&gi| gi as f64 / rf).collect();
        let y = (target.f)(&x);
        if y.len() != target.d_y {
            return Err(SurgeryError::Shape("target output dim mismatch".into()));
        }
        for (i, v) in y.iter().enumerate() {
            aout[(i, n)] = *v;
        }
    }
    layers.push((aout, vec![0.0; target.d_y]));
    Ok(layers)
}

const GRID_CHUNK: usize = 512;

fn fnn_grid_sup(fnn: &FeedforwardNet, target: &PastDependentTarget, ppa: usize) -> Result<f64> {
    let d = target.input_len();
    let total = checked_grid_size(ppa, d, 10_000_000)?;
    let chunks: Vec<(usize, usize)> = (0..total)
        .step_by(GRID_CHUNK)
        .map(|s| (s, (s + GRID_CHUNK).min(total)))
        .collect();
    let err = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let p = hi - lo;
            let mut xs = Mat::zeros(d, p);
            for j in 0..p {
                for (i, v) in grid_point(lo + j, ppa, d).iter().enumerate() {
                    xs[(i, j)] = *v;
                }
            }
            let got = eval_fnn_batch(fnn, &xs).expect("dims checked");
            let mut worst: f64 = 0.0;
            for j in 0..p {
                let x = grid_point(lo + j, ppa, d);
                let want = (target.f)(&x);
                for (i, w) in want.iter().enumerate() {
                    worst = worst.max((got[(i, j)] - w).abs());
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    Ok(err)
}

/// Interpolation FNN for one step's target on [0,1]^{d_x*t0} with `resolution`
/// cells per axis, plus its measured dense-grid sup-error.
pub fn holder_fnn(
    target: &PastDependentTarget,
    resolution: usize,
    t0: usize,
    n_len: usize,
) -> Result<(FeedforwardNet, f64)> {
    if resolution < 1 {
        return Err(SurgeryError::Invalid("resolution must be >= 1".into()));
    }
    if t0 != target.t {
        return Err(SurgeryError::Invalid(format!(
            "t0 = {t0} does not match the target's t = {}",
            target.t
        )));
    }
    if t0 > n_len {
        return Err(SurgeryError::Invalid(format!(
            "t0 = {t0} exceeds sequence length {n_len}"
        )));
    }
    let d = target.input_len();
    let fnn = FeedforwardNet::new(holder_layers(target, resolution, d)?);

    // measure on nodes plus cell midpoints, coarsened if the grid explodes
    let mut mppa = 2 * resolution + 1;
    while checked_grid_size(mppa, d, 2_000_000).is_err() && mppa > 3 {
        mppa = mppa / 2 + 1;
    }
    let err = fnn_grid_sup(&fnn, target, mppa)?;
    Ok((fnn, err))
}

/// Max over the tensor grid of the step-t output error of `net` against the
/// target. Deterministic (max over a fixed grid, order-independent).
pub fn sup_error_on_grid(
    net: &RecurrentNet,
    target: &PastDependentTarget,
    points_per_axis: usize,
) -> Result<f64> {
    if net.input_dim() != target.d_x {
        return Err(SurgeryError::Shape(format!(
            "net input dim {} but target d_x = {}",
            net.input_dim(),
            target.d_x
        )));
    }
    if net.output_dim() != target.d_y {
        return Err(SurgeryError::Shape(format!(
            "net output dim {} but target d_y = {}",
            net.output_dim(),
            target.d_y
        )));
    }
    let d = target.input_len();
    let total = checked_grid_size(points_per_axis, d, 10_000_000)?;
    let t = target.t;
    let chunks: Vec<(usize, usize)> = (0..total)
        .step_by(GRID_CHUNK)
        .map(|s| (s, (s + GRID_CHUNK).min(total)))
        .collect();
    let err = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let p = hi - lo;
            let mut tokens = vec![Mat::zeros(target.d_x, p); t];
            for j in 0..p {
                let x = grid_point(lo + j, points_per_axis, d);
                for s in 0..t {
                    for i in 0..target.d_x {
                        tokens[s][(i, j)] = x[s * target.d_x + i];
                    }
                }
            }
            let outs = eval_rnn_batch(net, &tokens).expect("dims checked");
            let last = &outs[t - 1];
            let mut worst: f64 = 0.0;
            for j in 0..p {
                let x = grid_point(lo + j, points_per_axis, d);
                let want = (target.f)(&x);
                for (i, w) in want.iter().enumerate() {
                    worst = worst.max((last[(i, j)] - w).abs());
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    Ok(err)
}

/// One recurrent net approximating every step's target simultaneously:
/// sum over t of product(indicator_t, trunc_K(unrolled interpolation FNN)).
pub fn assemble_sequence_approximator(
    targets: &[PastDependentTarget],
    budget: &ApproxBudget,
    resolution: usize,
) -> Result<RecurrentNet> {
    if targets.is_empty() {
        return Err(SurgeryError::Invalid("need at least one target".into()));
    }
    let n_len = targets.len();
    let (d_x, d_y, k) = (targets[0].d_x, targets[0].d_y, targets[0].k);
    for (i, tg) in targets.iter().enumerate() {
        if tg.t != i + 1 {
            return Err(SurgeryError::Invalid(format!(
                "target {} has t = {}, expected {}",
                i,
                tg.t,
                i + 1
            )));
        }
        if tg.d_x != d_x || tg.d_y != d_y || tg.k != k {
            return Err(SurgeryError::Invalid(
                "targets must share d_x, d_y, k".into(),
            ));
        }
    }

    let trunc = trunc_net(k, d_y)?;
    let prod = product_net(k, budget, d_y)?;

    let mut acc: Option<RecurrentNet> = None;
    for (i, tg) in targets.iter().enumerate() {
        let t0 = i + 1;
        let (fnn, _err) = holder_fnn(tg, resolution, t0, n_len)?;
        let step_rnn = fnn_to_rnn(&fnn, t0, n_len)?;
        let clipped = compose(&trunc, &step_rnn)?;
        let indicator = indicator_rnn(t0, n_len, d_x)?;
        let pair = concat(&clipped, &indicator)?;
        let term = compose(&prod, &pair)?;
        acc = Some(match acc {
            None => term,
            Some(a) => lincomb(1.0, &a, 1.0, &term)?,
        });
    }
    Ok(acc.unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{eval_rnn, TokenSequence};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn scalar_target(
        t: usize,
        k: f64,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> PastDependentTarget {
        PastDependentTarget::new(t, 1, 1, 1.0, k, Arc::new(move |x| vec![f(x)])).unwrap()
    }

    #[test]
    fn indicator_middle_of_five() {
        let net = indicator_rnn(3, 5, 1).unwrap();
        let out = eval_rnn(&net, &TokenSequence::scalar(&[0.2; 5])).unwrap();
        assert_eq!(out.data, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn indicator_single_step() {
        let net = indicator_rnn(1, 1, 1).unwrap();
        let out = eval_rnn(&net, &TokenSequence::scalar(&[0.9])).unwrap();
        assert_eq!(out.data, vec![1.0]);
    }

    #[test]
    fn indicator_last_of_seven() {
        // hand evaluation: sigma(t-6) - 2 sigma(t-7) + sigma(t-8)
        let net = indicator_rnn(7, 7, 1).unwrap();
        let out = eval_rnn(&net, &TokenSequence::scalar(&[0.0; 7])).unwrap();
        assert_eq!(out.data, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn indicator_partition_over_steps() {
        // outputs are exactly 0/1 and sum to 1 over t, all t0 and N <= 10
        for n in 1..=10usize {
            let x = TokenSequence::scalar(&vec![0.5; n]);
            let mut sums = vec![0.0; n];
            for t0 in 1..=n {
                let out = eval_rnn(&indicator_rnn(t0, n, 1).unwrap(), &x).unwrap();
                for t in 0..n {
                    let v = out[(0, t)];
                    assert!(v == 0.0 || v == 1.0);
                    sums[t] += v;
                }
            }
            assert!(sums.iter().all(|&s| s == 1.0));
        }
    }

    #[test]
    fn trunc_clips_exactly() {
        let net = trunc_net(1.0, 3).unwrap();
        let x = TokenSequence::from_tokens(&[vec![2.0, -0.5, -3.0]]);
        let out = eval_rnn(&net, &x).unwrap();
        assert_eq!(out.data, vec![1.0, -0.5, -1.0]);
    }

    #[test]
    fn trunc_passthrough_region() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = 2.5;
        let net = trunc_net(k, 1).unwrap();
        for _ in 0..1000 {
            let v = rng.gen_range(-k..k);
            let out = eval_rnn(&net, &TokenSequence::scalar(&[v])).unwrap();
            assert_eq!(out[(0, 0)], v);
        }
    }

    #[test]
    fn trunc_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = trunc_net(1.0, 2).unwrap();
        let twice = compose(&net, &net).unwrap();
        for _ in 0..200 {
            let tok: Vec<f64> = (0..2).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let x = TokenSequence::from_tokens(&[tok]);
            let a = eval_rnn(&net, &x).unwrap();
            let b = eval_rnn(&twice, &x).unwrap();
            for (u, v) in a.data.iter().zip(&b.data) {
                assert!((u - v).abs() <= 1e-12);
            }
        }
    }

    fn product_grid_sup(net: &RecurrentNet, k: f64, ppa: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for iu in 0..ppa {
            let u = -k + 2.0 * k * iu as f64 / (ppa - 1) as f64;
            for iv in 0..ppa {
                let v = iv as f64 / (ppa - 1) as f64;
                let x = TokenSequence::from_tokens(&[vec![u, v]]);
                let out = eval_rnn(net, &x).unwrap();
                worst = worst.max((out[(0, 0)] - u * v).abs());
            }
        }
        worst
    }

    #[test]
    fn product_zero_factor() {
        let budget = ApproxBudget::new(2, 3).unwrap();
        let net = product_net(1.0, &budget, 1).unwrap();
        let bound = product_error_bound(1.0, &budget);
        for iv in 0..=10 {
            let v = iv as f64 / 10.0;
            let out = eval_rnn(&net, &TokenSequence::from_tokens(&[vec![0.0, v]])).unwrap();
            assert!(out[(0, 0)].abs() <= bound);
        }
    }

    #[test]
    fn product_grid_error_within_bound() {
        let budget = ApproxBudget::new(2, 4).unwrap();
        let net = product_net(1.0, &budget, 1).unwrap();
        let bound = product_error_bound(1.0, &budget);
        let sup = product_grid_sup(&net, 1.0, 101);
        assert!(sup <= bound, "sup {sup} vs bound {bound}");
        // the center point in particular
        let out = eval_rnn(&net, &TokenSequence::from_tokens(&[vec![0.5, 0.5]])).unwrap();
        assert!((out[(0, 0)] - 0.25).abs() <= bound);
    }

    #[test]
    fn product_error_decreases_with_depth() {
        let mut prev = f64::INFINITY;
        for i_d in [1, 2, 4] {
            let budget = ApproxBudget::new(2, i_d).unwrap();
            let net = product_net(1.0, &budget, 1).unwrap();
            let sup = product_grid_sup(&net, 1.0, 101);
            assert!(sup < prev, "i_d {i_d}: {sup} !< {prev}");
            prev = sup;
        }
    }

    #[test]
    fn product_vector_coordinates_independent() {
        // d_y = 2 product net handles each coordinate separately
        let budget = ApproxBudget::new(2, 4).unwrap();
        let net = product_net(1.0, &budget, 2).unwrap();
        let bound = product_error_bound(1.0, &budget);
        let x = TokenSequence::from_tokens(&[vec![0.7, -0.3, 0.6]]);
        let out = eval_rnn(&net, &x).unwrap();
        assert!((out[(0, 0)] - 0.7 * 0.6).abs() <= bound);
        assert!((out[(1, 0)] - -0.3 * 0.6).abs() <= bound);
    }

    #[test]
    fn holder_reproduces_linear() {
        let tg = scalar_target(1, 1.0, |x| x[0]);
        for r in [1, 3, 8] {
            let (_fnn, err) = holder_fnn(&tg, r, 1, 1).unwrap();
            assert!(err <= 1e-9, "r = {r}: err {err}");
        }
    }

    #[test]
    fn holder_kink_on_grid_point() {
        let tg = scalar_target(1, 1.0, |x| (x[0] - 0.5).abs());
        let (_fnn, err) = holder_fnn(&tg, 4, 1, 1).unwrap();
        assert!(err <= 1e-9, "err {err}");
    }

    #[test]
    fn holder_reproduces_linear_2d() {
        // partition of unity + linear reproduction of the hat basis in 2d
        let tg = PastDependentTarget::new(
            2,
            1,
            1,
            1.0,
            2.0,
            Arc::new(|x: &[f64]| vec![0.3 * x[0] - 0.7 * x[1] + 0.1]),
        )
        .unwrap();
        let (_fnn, err) = holder_fnn(&tg, 3, 2, 2).unwrap();
        assert!(err <= 1e-9, "err {err}");
    }

    #[test]
    fn holder_second_order_on_smooth_target() {
        let f = |x: &[f64]| {
            vec![(2.0 * std::f64::consts::PI * x[0]).sin() * (std::f64::consts::PI * x[1]).cos()]
        };
        let tg = PastDependentTarget::new(1, 2, 1, 2.0, 1.0, Arc::new(f)).unwrap();
        let (_f16, e16) = holder_fnn(&tg, 16, 1, 1).unwrap();
        let (_f32, e32) = holder_fnn(&tg, 32, 1, 1).unwrap();
        let ratio = e16 / e32;
        assert!(
            (3.0..=5.0).contains(&ratio),
            "ratio {ratio} (e16 {e16}, e32 {e32})"
        );
    }

    #[test]
    fn sup_error_exact_net_is_zero() {
        // cumulative-sum net against the matching target
        let net = RecurrentNet::new(
            Mat::identity(1),
            vec![RnnLayer {
                a: Mat::identity(1),
                b: Mat::identity(1),
                c: vec![0.0],
            }],
            Mat::identity(1),
        );
        let tg =
            PastDependentTarget::new(2, 1, 1, 1.0, 2.0, Arc::new(|x: &[f64]| vec![x[0] + x[1]]))
                .unwrap();
        let err = sup_error_on_grid(&net, &tg, 9).unwrap();
        assert!(err <= 1e-12);
    }

    #[test]
    fn sup_error_constant_gap() {
        let net = RecurrentNet::new(
            Mat::zeros(1, 1),
            vec![RnnLayer {
                a: Mat::zeros(1, 1),
                b: Mat::zeros(1, 1),
                c: vec![0.0],
            }],
            Mat::zeros(1, 1),
        );
        let tg = scalar_target(1, 1.0, |_| 0.3);
        let err = sup_error_on_grid(&net, &tg, 11).unwrap();
        assert!((err - 0.3).abs() <= 1e-12);
    }

    #[test]
    fn sup_error_dominates_monte_carlo() {
        // grid sup + modulus slack >= random-sample sup for a Lipschitz net
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let tg = scalar_target(2, 1.0, |x| 0.5 * (x[0] - x[1]));
        let net = RecurrentNet::new(
            Mat::from_fn(2, 1, |_, _| rng.gen_range(-1.0..1.0)),
            vec![RnnLayer {
                a: Mat::from_fn(2, 2, |_, _| rng.gen_range(-0.5..0.5)),
                b: Mat::from_fn(2, 2, |_, _| rng.gen_range(-0.5..0.5)),
                c: vec![0.1, -0.1],
            }],
            Mat::from_fn(1, 2, |_, _| rng.gen_range(-1.0..1.0)),
        );
        let ppa = 41;
        let grid = sup_error_on_grid(&net, &tg, ppa).unwrap();
        let mut mc: f64 = 0.0;
        for _ in 0..100_000 {
            let toks: Vec<Vec<f64>> = (0..2).map(|_| vec![rng.gen_range(0.0..1.0)]).collect();
            let x = TokenSequence::from_tokens(&toks);
            let out = eval_rnn(&net, &x).unwrap();
            let flat = [toks[0][0], toks[1][0]];
            mc = mc.max((out[(0, 1)] - (tg.f)(&flat)[0]).abs());
        }
        // crude modulus slack: generous Lipschitz allowance per grid cell
        let slack = 20.0 / (ppa - 1) as f64;
        assert!(mc <= grid + slack, "mc {mc} grid {grid}");
    }

    #[test]
    fn assemble_two_steps_within_budget() {
        let t1 = scalar_target(1, 1.0, |x| x[0]);
        let t2 = scalar_target(2, 1.0, |x| 0.5 * (x[0] + x[1]));
        let budget = ApproxBudget::new(2, 5).unwrap();
        let net = assemble_sequence_approximator(&[t1.clone(), t2.clone()], &budget, 4).unwrap();
        let e1 = sup_error_on_grid(&net, &t1, 33).unwrap();
        let e2 = sup_error_on_grid(&net, &t2, 33).unwrap();
        assert!(e1 <= 0.05, "step 1 error {e1}");
        assert!(e2 <= 0.05, "step 2 error {e2}");
    }

    #[test]
    fn assemble_single_step() {
        let t1 = scalar_target(1, 1.0, |x| 1.0 - x[0]);
        let budget = ApproxBudget::new(2, 5).unwrap();
        let net = assemble_sequence_approximator(&[t1.clone()], &budget, 8).unwrap();
        let e = sup_error_on_grid(&net, &t1, 33).unwrap();
        assert!(e <= 0.02, "error {e}");
    }

    #[test]
    fn assemble_zero_targets() {
        let mk = |t| scalar_target(t, 1.0, |_| 0.0);
        let budget = ApproxBudget::new(2, 3).unwrap();
        let targets = vec![mk(1), mk(2), mk(3)];
        let net = assemble_sequence_approximator(&targets, &budget, 2).unwrap();
        let bound = 3.0 * product_error_bound(1.0, &budget);
        for tg in &targets {
            let e = sup_error_on_grid(&net, tg, 9).unwrap();
            assert!(e <= bound, "error {e} bound {bound}");
        }
    }

    #[test]
    fn spot_check_rejects_violating_target() {
        let tg = scalar_target(1, 0.5, |x| x[0] + 1.0);
        assert!(tg.spot_check_bound(5).is_err());
        let ok = scalar_target(1, 2.0, |x| x[0]);
        assert!(ok.spot_check_bound(5).is_ok());
    }
}
