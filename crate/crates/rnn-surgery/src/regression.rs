//! Regression harness for mixing sequence data: generator, sliding windows,
//! blocking, gradient-descent ERM over the clipped RNN class, excess-risk
//! estimation, and the bound/schedule calculators.

use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Result, SurgeryError};
use crate::linalg::Mat;
use crate::network::{eval_rnn_batch, RecurrentNet, RnnLayer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixingKind {
    Iid,
    ExponentialMixing,
}

/// Probit-transformed Gaussian AR(1): latent z_t = rho z_{t-1} +
/// sqrt(1-rho^2) eta_t started from the stationary law, token coordinate
/// Phi(z_t). Marginals are exactly uniform; rho < 1 gives exponential
/// beta-mixing. `Iid` ignores rho.
#[derive(Debug, Clone, Copy)]
pub struct MixingConfig {
    pub kind: MixingKind,
    pub rho: f64,
    pub d_x: usize,
    pub seed: u64,
}

#[derive(Clone)]
pub struct RegressionTask {
    pub f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub window: usize,
    pub noise: f64,
    pub beta: f64,
    pub k: f64,
    pub d_x: usize,
}

impl std::fmt::Debug for RegressionTask {
    fn fmt(&self, fm: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fm.debug_struct("RegressionTask")
            .field("window", &self.window)
            .field("noise", &self.noise)
            .field("beta", &self.beta)
            .field("k", &self.k)
            .field("d_x", &self.d_x)
            .finish_non_exhaustive()
    }
}

impl RegressionTask {
    /// Default experiment target: K sin(2 pi mean(x)) / 2, Lipschitz with
    /// constant pi K / (d_x N).
    pub fn mean_sinusoid(d_x: usize, window: usize, noise: f64, k: f64) -> Self {
        let kk = k;
        RegressionTask {
            f: Arc::new(move |x: &[f64]| {
                let m = x.iter().sum::<f64>() / x.len() as f64;
                kk * (2.0 * std::f64::consts::PI * m).sin() / 2.0
            }),
            window,
            noise,
            beta: 1.0,
            k,
            d_x,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub width: usize,
    pub depth: usize,
    pub clip: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub restarts: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 1 || self.depth < 1 || self.restarts < 1 || self.epochs < 1 {
            return Err(SurgeryError::Invalid(
                "width, depth, epochs, restarts must be >= 1".into(),
            ));
        }
        if !(self.clip > 0.0) || !(self.learning_rate > 0.0) {
            return Err(SurgeryError::Invalid(
                "clip and learning rate must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(SurgeryError::Invalid(
                "validation fraction must be in [0,1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub n: usize,
    pub mean_risk: f64,
    pub std_risk: f64,
}

/// One (n, replication) training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RepRecord {
    pub n: usize,
    pub replication: usize,
    pub excess_risk: f64,
    pub width: usize,
    pub depth: usize,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RateExperimentResult {
    pub rows: Vec<RateRow>,
    pub detail: Vec<RepRecord>,
    pub slope: f64,
    pub theory_exponent: f64,
    /// Risks too small for the log-log fit to mean anything.
    pub degenerate: bool,
}

/// Splitmix-style mixer deriving independent RNG streams from (base, a, b).
pub fn stream_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        .wrapping_add(a.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(b.wrapping_mul(0xBF58476D1CE4E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

pub fn gen_sequence(cfg: &MixingConfig, n: usize) -> Result<Vec<Vec<f64>>> {
    if n < 1 {
        return Err(SurgeryError::Invalid("sequence length must be >= 1".into()));
    }
    if cfg.d_x < 1 {
        return Err(SurgeryError::Invalid("d_x must be >= 1".into()));
    }
    let rho = match cfg.kind {
        MixingKind::Iid => 0.0,
        MixingKind::ExponentialMixing => cfg.rho,
    };
    if !(0.0..1.0).contains(&rho) {
        return Err(SurgeryError::Domain(format!("rho = {rho} outside [0, 1)")));
    }
    let phi = Normal::new(0.0, 1.0).expect("standard normal");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let drive = (1.0 - rho * rho).sqrt();
    // one independent latent chain per coordinate
    let mut z: Vec<f64> = (0..cfg.d_x).map(|_| rng.sample(StandardNormal)).collect();
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        if t > 0 {
            for zi in z.iter_mut() {
                let eta: f64 = rng.sample(StandardNormal);
                *zi = rho * *zi + drive * eta;
            }
        }
        out.push(z.iter().map(|&zi| phi.cdf(zi)).collect());
    }
    Ok(out)
}

/// One training example: N consecutive tokens and the response at the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub tokens: Vec<Vec<f64>>,
    pub y: f64,
}

impl Window {
    pub fn flat(&self) -> Vec<f64> {
        self.tokens.iter().flatten().copied().collect()
    }
}

pub fn sliding_windows(xs: &[Vec<f64>], ys: &[f64], n_win: usize) -> Result<Vec<Window>> {
    if n_win < 1 {
        return Err(SurgeryError::Invalid("window must be >= 1".into()));
    }
    if xs.len() < n_win {
        return Err(SurgeryError::Invalid(format!(
            "need at least {} tokens, got {}",
            n_win,
            xs.len()
        )));
    }
    if ys.len() != xs.len() {
        return Err(SurgeryError::Shape("xs and ys length mismatch".into()));
    }
    Ok((n_win - 1..xs.len())
        .map(|t| Window {
            tokens: xs[t + 1 - n_win..=t].to_vec(),
            y: ys[t],
        })
        .collect())
}

/// Consecutive length-N blocks; trailing remainder tokens are dropped.
pub fn make_blocks(xs: &[Vec<f64>], n_win: usize) -> Vec<Vec<Vec<f64>>> {
    xs.chunks_exact(n_win).map(|c| c.to_vec()).collect()
}

/// Sub-sequence B_a, B_{a+l}, ..., exactly floor(len/l) terms, a in 1..=l.
pub fn make_subblocks(blocks: &[Vec<Vec<f64>>], l: usize, a: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    if l < 1 || a < 1 || a > l {
        return Err(SurgeryError::Invalid(format!(
            "need 1 <= a <= l, got a = {a}, l = {l}"
        )));
    }
    let count = blocks.len() / l;
    Ok((0..count).map(|k| blocks[a - 1 + k * l].clone()).collect())
}

/// Parameter gradients, shaped exactly like the net they belong to.
#[derive(Debug, Clone)]
pub struct GradParams {
    pub embed: Mat,
    pub layers: Vec<RnnLayer>,
    pub project: Mat,
}

fn batch_tokens(windows: &[Window], d_x: usize, n_win: usize) -> Vec<Mat> {
    let p = windows.len();
    let mut mats = vec![Mat::zeros(d_x, p); n_win];
    for (j, w) in windows.iter().enumerate() {
        for t in 0..n_win {
            for i in 0..d_x {
                mats[t][(i, j)] = w.tokens[t][i];
            }
        }
    }
    mats
}

/// Mean squared error of the clipped last-step readout over the windows.
pub fn erm_loss(net: &RecurrentNet, windows: &[Window]) -> Result<f64> {
    if windows.is_empty() {
        return Err(SurgeryError::Invalid("no windows".into()));
    }
    let n_win = windows[0].tokens.len();
    let toks = batch_tokens(windows, net.input_dim(), n_win);
    let outs = eval_rnn_batch(net, &toks)?;
    let last = &outs[n_win - 1];
    let mut loss = 0.0;
    for (j, w) in windows.iter().enumerate() {
        let r = last[(0, j)] - w.y;
        loss += r * r;
    }
    Ok(loss / windows.len() as f64)
}

/// Loss plus its gradient by backpropagation through time. ReLU subgradient
/// is 1 on (0, inf) and 0 elsewhere; the output clip contributes 0 outside
/// (-K, K).
pub fn erm_loss_grad(net: &RecurrentNet, windows: &[Window]) -> Result<(f64, GradParams)> {
    if windows.is_empty() {
        return Err(SurgeryError::Invalid("no windows".into()));
    }
    let w = net.width();
    let nl = net.depth();
    let n_win = windows[0].tokens.len();
    let p = windows.len();
    let xts = batch_tokens(windows, net.input_dim(), n_win);

    // forward, keeping every hidden state and the embedded inputs
    let mut u0s: Vec<Mat> = Vec::with_capacity(n_win);
    let mut hs: Vec<Vec<Mat>> = vec![Vec::with_capacity(n_win); nl];
    let mut state = vec![Mat::zeros(w, p); nl];
    for xt in &xts {
        let u0 = net.embed.matmul(xt);
        let mut u = u0.clone();
        u0s.push(u0);
        for (l, layer) in net.layers.iter().enumerate() {
            let az = layer.a.matmul(&state[l]);
            let mut z = layer.b.matmul(&u);
            for i in 0..w {
                for j in 0..p {
                    let v = z[(i, j)] + az[(i, j)] + layer.c[i];
                    z[(i, j)] = if v > 0.0 { v } else { 0.0 };
                }
            }
            state[l] = z.clone();
            hs[l].push(z.clone());
            u = z;
        }
    }
    let out = net.project.matmul(&hs[nl - 1][n_win - 1]);
    let k = net.output_clip.unwrap_or(f64::INFINITY);
    let mut loss = 0.0;
    let mut gout = Mat::zeros(1, p);
    for (j, win) in windows.iter().enumerate() {
        let raw = out[(0, j)];
        let clipped = raw.clamp(-k, k);
        let r = clipped - win.y;
        loss += r * r;
        gout[(0, j)] = if raw.abs() < k {
            2.0 * r / p as f64
        } else {
            0.0
        };
    }
    loss /= p as f64;
    if !loss.is_finite() {
        return Err(SurgeryError::Diverged(
            "non-finite training loss; try a smaller learning rate".into(),
        ));
    }

    let mut g = GradParams {
        embed: Mat::zeros(net.embed.rows, net.embed.cols),
        layers: net
            .layers
            .iter()
            .map(|l| RnnLayer {
                a: Mat::zeros(l.a.rows, l.a.cols),
                b: Mat::zeros(l.b.rows, l.b.cols),
                c: vec![0.0; l.c.len()],
            })
            .collect(),
        project: Mat::zeros(net.project.rows, net.project.cols),
    };
    g.project = gout.matmul_bt(&hs[nl - 1][n_win - 1]);

    let mut dh: Vec<Vec<Mat>> = vec![vec![Mat::zeros(w, p); n_win]; nl];
    dh[nl - 1][n_win - 1] = net.project.matmul_at(&gout);
    for t in (0..n_win).rev() {
        for l in (0..nl).rev() {
            // kill gradient where the unit was inactive
            let mut gm = dh[l][t].clone();
            for i in 0..w {
                for j in 0..p {
                    if hs[l][t][(i, j)] <= 0.0 {
                        gm[(i, j)] = 0.0;
                    }
                }
            }
            for i in 0..w {
                for j in 0..p {
                    g.layers[l].c[i] += gm[(i, j)];
                }
            }
            if t > 0 {
                let da = gm.matmul_bt(&hs[l][t - 1]);
                for (d, s) in g.layers[l].a.data.iter_mut().zip(&da.data) {
                    *d += s;
                }
                let back = net.layers[l].a.matmul_at(&gm);
                for (d, s) in dh[l][t - 1].data.iter_mut().zip(&back.data) {
                    *d += s;
                }
            }
            let input = if l > 0 { &hs[l - 1][t] } else { &u0s[t] };
            let db = gm.matmul_bt(input);
            for (d, s) in g.layers[l].b.data.iter_mut().zip(&db.data) {
                *d += s;
            }
            let down = net.layers[l].b.matmul_at(&gm);
            if l > 0 {
                for (d, s) in dh[l - 1][t].data.iter_mut().zip(&down.data) {
                    *d += s;
                }
            } else {
                let dp = down.matmul_bt(&xts[t]);
                for (d, s) in g.embed.data.iter_mut().zip(&dp.data) {
                    *d += s;
                }
            }
        }
    }
    Ok((loss, g))
}

fn apply_step(net: &RecurrentNet, g: &GradParams, eta: f64) -> RecurrentNet {
    let sub = |m: &Mat, gm: &Mat| Mat {
        rows: m.rows,
        cols: m.cols,
        data: m
            .data
            .iter()
            .zip(&gm.data)
            .map(|(a, b)| a - eta * b)
            .collect(),
    };
    let mut out = net.clone();
    out.embed = sub(&net.embed, &g.embed);
    for (l, gl) in out.layers.iter_mut().zip(&g.layers) {
        l.a = sub(&l.a, &gl.a);
        l.b = sub(&l.b, &gl.b);
        for (c, gc) in l.c.iter_mut().zip(&gl.c) {
            *c -= eta * gc;
        }
    }
    out.project = sub(&net.project, &g.project);
    out
}

// flat views over the parameter blocks of a GradParams, in a fixed order
fn gp_blocks_mut(g: &mut GradParams) -> Vec<&mut [f64]> {
    let mut out: Vec<&mut [f64]> = vec![g.embed.data.as_mut_slice()];
    for l in g.layers.iter_mut() {
        out.push(l.a.data.as_mut_slice());
        out.push(l.b.data.as_mut_slice());
        out.push(l.c.as_mut_slice());
    }
    out.push(g.project.data.as_mut_slice());
    out
}

fn gp_blocks(g: &GradParams) -> Vec<&[f64]> {
    let mut out: Vec<&[f64]> = vec![g.embed.data.as_slice()];
    for l in g.layers.iter() {
        out.push(l.a.data.as_slice());
        out.push(l.b.data.as_slice());
        out.push(l.c.as_slice());
    }
    out.push(g.project.data.as_slice());
    out
}

fn gp_zeros_like(g: &GradParams) -> GradParams {
    let z = |m: &Mat| Mat {
        rows: m.rows,
        cols: m.cols,
        data: vec![0.0; m.data.len()],
    };
    GradParams {
        embed: z(&g.embed),
        layers: g
            .layers
            .iter()
            .map(|l| RnnLayer {
                a: z(&l.a),
                b: z(&l.b),
                c: vec![0.0; l.c.len()],
            })
            .collect(),
        project: z(&g.project),
    }
}

// diagonally preconditioned descent direction: exponential moving averages of
// the gradient and its square, combined Adam-style with bias correction
fn precond_direction(
    m: &mut GradParams,
    v: &mut GradParams,
    g: &GradParams,
    step: usize,
) -> GradParams {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    let bc1 = 1.0 - B1.powi(step as i32);
    let bc2 = 1.0 - B2.powi(step as i32);
    let mut d = gp_zeros_like(g);
    for (((mb, vb), gb), db) in gp_blocks_mut(m)
        .into_iter()
        .zip(gp_blocks_mut(v))
        .zip(gp_blocks(g))
        .zip(gp_blocks_mut(&mut d))
    {
        for i in 0..gb.len() {
            mb[i] = B1 * mb[i] + (1.0 - B1) * gb[i];
            vb[i] = B2 * vb[i] + (1.0 - B2) * gb[i] * gb[i];
            db[i] = (mb[i] / bc1) / ((vb[i] / bc2).sqrt() + 1e-8);
        }
    }
    d
}

fn init_net(d_x: usize, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> RecurrentNet {
    let w = cfg.width;
    let s = 1.0 / (w as f64).sqrt();
    let embed = Mat::from_fn(w, d_x, |_, _| rng.gen_range(-1.0..1.0));
    let layers = (0..cfg.depth)
        .map(|_| RnnLayer {
            // near-identity B keeps the stack trainable at depth ~log n; half
            // the biases are negative so units kink inside the data range
            // instead of the whole stack collapsing to an affine map
            // dense random recurrent mixing: step-t features see random
            // combinations of the whole previous state, which keeps the
            // random-feature pool rich as the schedule widens
            a: Mat::from_fn(w, w, |_, _| 0.5 * s * rng.gen_range(-1.0..1.0)),
            b: Mat::from_fn(w, w, |i, j| {
                let base = if i == j { 1.0 } else { 0.0 };
                base + 0.1 * s * rng.gen_range(-1.0..1.0)
            }),
            c: (0..w)
                .map(|i| {
                    if i % 2 == 0 {
                        0.05 + 0.05 * rng.gen_range(0.0..1.0)
                    } else {
                        rng.gen_range(-0.35..0.05)
                    }
                })
                .collect(),
        })
        .collect();
    // near-zero readout keeps initial predictions inside the clip, where the
    // clip subgradient is nonzero
    let project = Mat::from_fn(1, w, |_, _| 0.02 * s * rng.gen_range(-1.0..1.0));
    let mut net = RecurrentNet::new(embed, layers, project);
    net.output_clip = Some(cfg.clip);
    net
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub net: RecurrentNet,
    /// Per-epoch training loss of the winning restart (non-increasing).
    pub train_trace: Vec<f64>,
    pub validation_mse: f64,
}

/// Full-batch gradient descent with a halving line search, so the recorded
/// loss trace is monotone by construction. Runs `restarts` independent
/// initializations and returns the one with the lowest validation loss.
pub fn train_erm(
    task: &RegressionTask,
    windows: &[Window],
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    if windows.len() < 10 {
        return Err(SurgeryError::Invalid(format!(
            "need at least 10 windows, got {}",
            windows.len()
        )));
    }
    for w in windows {
        if w.tokens.len() != task.window || w.tokens[0].len() != task.d_x {
            return Err(SurgeryError::Shape(
                "window shape does not match the task".into(),
            ));
        }
    }

    // deterministic shuffle split, shared across restarts
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut split_rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, 0x5EED, 0));
    order.shuffle(&mut split_rng);
    let n_val =
        ((cfg.validation_fraction * windows.len() as f64).round() as usize).min(windows.len() - 1);
    let val: Vec<Window> = order[..n_val].iter().map(|&i| windows[i].clone()).collect();
    let train: Vec<Window> = order[n_val..].iter().map(|&i| windows[i].clone()).collect();

    let mut best: Option<TrainedModel> = None;
    let mut failures = Vec::new();
    for r in 0..cfg.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, 1, r as u64));
        let mut net = init_net(task.d_x, cfg, &mut rng);
        let mut eta = cfg.learning_rate;
        let mut moments: Option<(GradParams, GradParams)> = None;
        let mut step = 0usize;
        let mut trace = Vec::with_capacity(cfg.epochs);
        let mut ok = true;
        for _epoch in 0..cfg.epochs {
            let (loss, grad) = match erm_loss_grad(&net, &train) {
                Ok(v) => v,
                Err(e) => {
                    failures.push(format!("restart {r}: {e}"));
                    ok = false;
                    break;
                }
            };
            trace.push(loss);
            step += 1;
            let (m, v) =
                moments.get_or_insert_with(|| (gp_zeros_like(&grad), gp_zeros_like(&grad)));
            let dir = precond_direction(m, v, &grad, step);
            // halving line search on the preconditioned direction, falling
            // back to the raw gradient; only non-increasing steps are
            // accepted, so the recorded trace stays monotone
            let mut stepped = false;
            for d in [&dir, &grad] {
                let mut e = eta;
                while e > 1e-14 {
                    let cand = apply_step(&net, d, e);
                    match erm_loss(&cand, &train) {
                        Ok(l2) if l2 <= loss + 1e-12 => {
                            net = cand;
                            stepped = true;
                            eta = e;
                            break;
                        }
                        _ => e *= 0.5,
                    }
                }
                if stepped {
                    break;
                }
            }
            if !stepped {
                break; // no descent direction at any step size; converged
            }
            eta = (eta * 2.0).min(cfg.learning_rate * 8.0);
        }
        if !ok {
            continue;
        }
        let vset = if val.is_empty() { &train } else { &val };
        let vmse = match erm_loss(&net, vset) {
            Ok(v) => v,
            Err(e) => {
                failures.push(format!("restart {r}: {e}"));
                continue;
            }
        };
        if best.as_ref().map_or(true, |b| vmse < b.validation_mse) {
            best = Some(TrainedModel {
                net,
                train_trace: trace,
                validation_mse: vmse,
            });
        }
    }
    best.ok_or_else(|| {
        SurgeryError::Diverged(format!("all restarts failed: {}", failures.join("; ")))
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Monte-Carlo estimate of ||f_hat - f*||^2 under the stationary window law,
/// over m sliding windows of one fresh chain.
pub fn excess_risk(
    fitted: &RecurrentNet,
    task: &RegressionTask,
    m: usize,
    cfg: &MixingConfig,
) -> Result<RiskEstimate> {
    if m < 1000 {
        return Err(SurgeryError::Invalid(
            "need m >= 1000 Monte-Carlo windows".into(),
        ));
    }
    let xs = gen_sequence(cfg, m + task.window - 1)?;
    let ys = vec![0.0; xs.len()];
    let windows = sliding_windows(&xs, &ys, task.window)?;
    let toks = batch_tokens(&windows, task.d_x, task.window);
    let outs = eval_rnn_batch(fitted, &toks)?;
    let last = &outs[task.window - 1];
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for (j, w) in windows.iter().enumerate() {
        let d = last[(0, j)] - (task.f)(&w.flat());
        let v = d * d;
        sum += v;
        sumsq += v * v;
    }
    let mf = m as f64;
    let mean = sum / mf;
    let var = (sumsq / mf - mean * mean).max(0.0);
    Ok(RiskEstimate {
        mean,
        std_error: (var / mf).sqrt(),
    })
}

/// W^2 L^2 log(max{W, L, 2}) log(Kn / delta), the covering-number growth
/// function with unit constant and a floor of 2 inside the first log.
pub fn covering_bound(w: usize, l: usize, k: f64, n: usize, delta: f64) -> Result<f64> {
    if w < 1 || l < 1 || n < 1 || !(k > 0.0) || !(delta > 0.0) {
        return Err(SurgeryError::Invalid(
            "all covering-bound arguments must be positive".into(),
        ));
    }
    let arg = k * n as f64 / delta;
    if arg <= 1.0 {
        return Err(SurgeryError::Domain(format!(
            "need delta < Kn, got Kn/delta = {arg}"
        )));
    }
    let wl = (w.max(l).max(2)) as f64;
    Ok((w * w * l * l) as f64 * wl.ln() * arg.ln())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleCase {
    ExpMixing,
    AlgMixing { r: f64 },
    Iid,
}

/// Width/depth schedule W = ceil(n^alpha log n), L = ceil(n^(e-alpha) log n)
/// with e the case exponent, plus the excess-risk rate exponent.
pub fn theory_schedule(
    n: usize,
    alpha: f64,
    beta: f64,
    d_x: usize,
    n_win: usize,
    case: ScheduleCase,
) -> Result<(usize, usize, f64)> {
    if n < 2 || d_x < 1 || n_win < 1 || !(beta > 0.0) {
        return Err(SurgeryError::Invalid(
            "need n >= 2 and positive beta, d_x, N".into(),
        ));
    }
    let d = (d_x * n_win) as f64;
    let (e, rate) = match case {
        ScheduleCase::ExpMixing | ScheduleCase::Iid => {
            (d / (2.0 * d + 4.0 * beta), -2.0 * beta / (d + 2.0 * beta))
        }
        ScheduleCase::AlgMixing { r } => {
            if !(r > 0.0) {
                return Err(SurgeryError::Invalid("algebraic mixing needs r > 0".into()));
            }
            (
                r * d / ((2.0 * r + 2.0) * d + (4.0 * r + 8.0) * beta),
                -2.0 * r * beta / ((r + 1.0) * d + (2.0 * r + 4.0) * beta),
            )
        }
    };
    if !(-1e-12..=e + 1e-12).contains(&alpha) {
        return Err(SurgeryError::Domain(format!(
            "alpha = {alpha} outside [0, {e}]"
        )));
    }
    let nf = n as f64;
    let w = (nf.powf(alpha.max(0.0)) * nf.ln()).ceil() as usize;
    let l = (nf.powf((e - alpha).max(0.0)) * nf.ln()).ceil() as usize;
    Ok((w.max(1), l.max(1), rate))
}

fn case_for(cfg: &MixingConfig) -> ScheduleCase {
    match cfg.kind {
        MixingKind::Iid => ScheduleCase::Iid,
        MixingKind::ExponentialMixing => ScheduleCase::ExpMixing,
    }
}

/// Trains at each n with the theoretical (W, L) schedule, measures excess
/// risk over fresh chains, and fits the log-log slope. Every (n, replication)
/// job owns its RNG streams, so scheduling cannot change the result.
pub fn rate_experiment(
    task: &RegressionTask,
    cfg: &MixingConfig,
    ns: &[usize],
    replications: usize,
    template: &TrainConfig,
) -> Result<RateExperimentResult> {
    if ns.len() < 3 || ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SurgeryError::Invalid(
            "need >= 3 strictly increasing sample sizes".into(),
        ));
    }
    if replications < 3 {
        return Err(SurgeryError::Invalid("need >= 3 replications".into()));
    }
    let case = case_for(cfg);
    // alpha at the upper endpoint keeps depth at ceil(log n), which trains
    // far better than the deep end of the schedule range
    let d = (task.d_x * task.window) as f64;
    let alpha = match case {
        ScheduleCase::AlgMixing { r } => {
            r * d / ((2.0 * r + 2.0) * d + (4.0 * r + 8.0) * task.beta)
        }
        _ => d / (2.0 * d + 4.0 * task.beta),
    };

    let jobs: Vec<(usize, usize)> = ns
        .iter()
        .flat_map(|&n| (0..replications).map(move |r| (n, r)))
        .collect();
    let risks: Result<Vec<RepRecord>> = jobs
        .par_iter()
        .map(|&(n, rep)| {
            let start = std::time::Instant::now();
            let base = stream_seed(cfg.seed, n as u64, rep as u64);
            let data_cfg = MixingConfig { seed: base, ..*cfg };
            let xs = gen_sequence(&data_cfg, n)?;
            let mut noise_rng = ChaCha8Rng::seed_from_u64(stream_seed(base, 2, 0));
            let ys: Vec<f64> = (0..n)
                .map(|t| {
                    let eps: f64 = noise_rng.sample(StandardNormal);
                    if t + 1 >= task.window {
                        let flat: Vec<f64> = xs[t + 1 - task.window..=t]
                            .iter()
                            .flatten()
                            .copied()
                            .collect();
                        (task.f)(&flat) + task.noise * eps
                    } else {
                        0.0
                    }
                })
                .collect();
            let windows = sliding_windows(&xs, &ys, task.window)?;
            let (w, l, _) = theory_schedule(n, alpha, task.beta, task.d_x, task.window, case)?;
            let tc = TrainConfig {
                width: w,
                depth: l,
                seed: stream_seed(base, 3, 0),
                ..*template
            };
            let model = train_erm(task, &windows, &tc)?;
            let risk_cfg = MixingConfig {
                seed: stream_seed(base, 4, 0),
                ..*cfg
            };
            let est = excess_risk(&model.net, task, 2000, &risk_cfg)?;
            Ok(RepRecord {
                n,
                replication: rep,
                excess_risk: est.mean,
                width: w,
                depth: l,
                wall_seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect();
    let risks = risks?;

    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let vals: Vec<f64> = risks
            .iter()
            .filter(|r| r.n == n)
            .map(|r| r.excess_risk)
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var =
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (vals.len() - 1) as f64;
        rows.push(RateRow {
            n,
            mean_risk: mean,
            std_risk: var.sqrt(),
        });
    }

    let degenerate = rows.iter().all(|r| r.mean_risk < 1e-4);
    let slope = if degenerate {
        0.0
    } else {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .map(|r| ((r.n as f64).ln(), r.mean_risk.max(1e-300).ln()))
            .collect();
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
        let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let den: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        num / den
    };
    let (_, _, theory_exponent) =
        theory_schedule(ns[0], 0.0, task.beta, task.d_x, task.window, case)?;
    Ok(RateExperimentResult {
        rows,
        detail: risks,
        slope,
        theory_exponent,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{eval_rnn, TokenSequence};

    fn iid_cfg(seed: u64) -> MixingConfig {
        MixingConfig {
            kind: MixingKind::Iid,
            rho: 0.0,
            d_x: 1,
            seed,
        }
    }

    #[test]
    fn generator_uniform_when_independent() {
        let xs = gen_sequence(&iid_cfg(42), 10_000).unwrap();
        let mut v: Vec<f64> = xs.iter().map(|t| t[0]).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = v.len() as f64;
        let mut d: f64 = 0.0;
        for (i, x) in v.iter().enumerate() {
            d = d
                .max((x - i as f64 / n).abs())
                .max(((i + 1) as f64 / n - x).abs());
        }
        // 1% critical value of the one-sample KS statistic
        assert!(d < 1.628 / n.sqrt(), "KS statistic {d}");
    }

    #[test]
    fn generator_lag1_correlation() {
        let cfg = MixingConfig {
            kind: MixingKind::ExponentialMixing,
            rho: 0.9,
            d_x: 1,
            seed: 7,
        };
        let xs = gen_sequence(&cfg, 100_000).unwrap();
        let phi = Normal::new(0.0, 1.0).unwrap();
        let z: Vec<f64> = xs.iter().map(|t| phi.inverse_cdf(t[0])).collect();
        let n = z.len() - 1;
        let m0 = z[..n].iter().sum::<f64>() / n as f64;
        let m1 = z[1..].iter().sum::<f64>() / n as f64;
        let mut num = 0.0;
        let mut v0 = 0.0;
        let mut v1 = 0.0;
        for i in 0..n {
            num += (z[i] - m0) * (z[i + 1] - m1);
            v0 += (z[i] - m0) * (z[i] - m0);
            v1 += (z[i + 1] - m1) * (z[i + 1] - m1);
        }
        let r = num / (v0 * v1).sqrt();
        assert!((r - 0.9).abs() <= 0.02, "lag-1 correlation {r}");
    }

    #[test]
    fn generator_deterministic() {
        let cfg = MixingConfig {
            kind: MixingKind::ExponentialMixing,
            rho: 0.5,
            d_x: 2,
            seed: 9,
        };
        assert_eq!(
            gen_sequence(&cfg, 50).unwrap(),
            gen_sequence(&cfg, 50).unwrap()
        );
    }

    #[test]
    fn generator_iid_equals_rho_zero() {
        let a = gen_sequence(&iid_cfg(3), 100).unwrap();
        let cfg = MixingConfig {
            kind: MixingKind::ExponentialMixing,
            rho: 0.0,
            d_x: 1,
            seed: 3,
        };
        assert_eq!(a, gen_sequence(&cfg, 100).unwrap());
    }

    #[test]
    fn generator_stationary_first_vs_last() {
        // two-sample KS between token 1 and token 5 over many short chains
        let mut first = Vec::new();
        let mut last = Vec::new();
        for s in 0..10_000u64 {
            let cfg = MixingConfig {
                kind: MixingKind::ExponentialMixing,
                rho: 0.9,
                d_x: 1,
                seed: s,
            };
            let xs = gen_sequence(&cfg, 5).unwrap();
            first.push(xs[0][0]);
            last.push(xs[4][0]);
        }
        first.sort_by(|a, b| a.partial_cmp(b).unwrap());
        last.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = first.len() as f64;
        let mut d: f64 = 0.0;
        let mut j = 0usize;
        for (i, x) in first.iter().enumerate() {
            while j < last.len() && last[j] <= *x {
                j += 1;
            }
            d = d.max(((i + 1) as f64 / n - j as f64 / n).abs());
        }
        // 1% two-sample critical value with equal sizes
        assert!(d < 1.628 * (2.0 / n).sqrt(), "two-sample KS {d}");
    }

    #[test]
    fn generator_rejects_bad_rho() {
        let cfg = MixingConfig {
            kind: MixingKind::ExponentialMixing,
            rho: 1.0,
            d_x: 1,
            seed: 0,
        };
        assert!(gen_sequence(&cfg, 10).is_err());
    }

    #[test]
    fn window_counts() {
        let xs: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let ys: Vec<f64> = (0..5).map(|i| i as f64).collect();
        assert_eq!(sliding_windows(&xs, &ys, 2).unwrap().len(), 4);
        assert_eq!(sliding_windows(&xs, &ys, 1).unwrap().len(), 5);
        let w = sliding_windows(&xs, &ys, 5).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].tokens.len(), 5);
        assert_eq!(w[0].y, 4.0);
        assert!(sliding_windows(&xs[..1], &ys[..1], 2).is_err());
    }

    #[test]
    fn block_counts() {
        let xs: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64]).collect();
        let blocks = make_blocks(&xs, 2);
        assert_eq!(blocks.len(), 3); // remainder token dropped
        assert_eq!(blocks[2][1], vec![5.0]);
        let s1 = make_subblocks(&blocks, 2, 1).unwrap();
        assert_eq!(s1, vec![blocks[0].clone()]);
        let s2 = make_subblocks(&blocks, 2, 2).unwrap();
        assert_eq!(s2, vec![blocks[1].clone()]);
        assert_eq!(make_subblocks(&blocks, 1, 1).unwrap(), blocks);
        assert!(make_subblocks(&blocks, 2, 3).is_err());
        assert!(make_subblocks(&blocks, 2, 0).is_err());
    }

    fn small_cfg(w: usize, l: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            width: w,
            depth: l,
            clip: 1.0,
            learning_rate: 0.5,
            epochs: 300,
            restarts: 2,
            validation_fraction: 0.2,
            seed,
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..3 {
            let mut net = init_net(
                1,
                &TrainConfig {
                    width: 3,
                    depth: 1,
                    ..small_cfg(3, 1, rng.gen())
                },
                &mut rng,
            );
            net.output_clip = Some(10.0); // keep outputs inside the clip
            let windows: Vec<Window> = (0..8)
                .map(|_| Window {
                    tokens: vec![
                        vec![rng.gen_range(0.05..0.95)],
                        vec![rng.gen_range(0.05..0.95)],
                    ],
                    y: rng.gen_range(-0.5..0.5),
                })
                .collect();
            let (_, grad) = erm_loss_grad(&net, &windows).unwrap();
            let h = 1e-6;
            let check = |get: &dyn Fn(&RecurrentNet) -> f64,
                         set: &dyn Fn(&mut RecurrentNet, f64),
                         g: f64| {
                let v0 = get(&net);
                let mut np = net.clone();
                set(&mut np, v0 + h);
                let lp = erm_loss(&np, &windows).unwrap();
                set(&mut np, v0 - h);
                let lm = erm_loss(&np, &windows).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let denom = fd.abs().max(g.abs()).max(1e-8);
                assert!((fd - g).abs() / denom <= 1e-5, "fd {fd} vs analytic {g}");
            };
            for idx in 0..3 {
                let i = idx;
                check(
                    &|n: &RecurrentNet| n.embed[(i, 0)],
                    &|n: &mut RecurrentNet, v| n.embed[(i, 0)] = v,
                    grad.embed[(i, 0)],
                );
                check(
                    &|n: &RecurrentNet| n.layers[0].a[(i, i)],
                    &|n: &mut RecurrentNet, v| n.layers[0].a[(i, i)] = v,
                    grad.layers[0].a[(i, i)],
                );
                check(
                    &|n: &RecurrentNet| n.layers[0].b[(i, 0)],
                    &|n: &mut RecurrentNet, v| n.layers[0].b[(i, 0)] = v,
                    grad.layers[0].b[(i, 0)],
                );
                check(
                    &|n: &RecurrentNet| n.layers[0].c[i],
                    &|n: &mut RecurrentNet, v| n.layers[0].c[i] = v,
                    grad.layers[0].c[i],
                );
                check(
                    &|n: &RecurrentNet| n.project[(0, i)],
                    &|n: &mut RecurrentNet, v| n.project[(0, i)] = v,
                    grad.project[(0, i)],
                );
            }
        }
    }

    #[test]
    fn train_fits_constant() {
        let task = RegressionTask {
            f: Arc::new(|_| 0.4),
            window: 2,
            noise: 0.0,
            beta: 1.0,
            k: 1.0,
            d_x: 1,
        };
        let xs = gen_sequence(&iid_cfg(1), 60).unwrap();
        let ys = vec![0.4; 60];
        let windows = sliding_windows(&xs, &ys, 2).unwrap();
        let model = train_erm(&task, &windows, &small_cfg(4, 1, 5)).unwrap();
        let final_loss = *model.train_trace.last().unwrap();
        assert!(final_loss <= 1e-4, "final training MSE {final_loss}");
    }

    #[test]
    fn train_loss_trace_monotone() {
        let task = RegressionTask {
            f: Arc::new(|x: &[f64]| x[1]),
            window: 2,
            noise: 0.0,
            beta: 1.0,
            k: 1.0,
            d_x: 1,
        };
        let xs = gen_sequence(&iid_cfg(2), 100).unwrap();
        let ys: Vec<f64> = xs.iter().map(|t| t[0]).collect();
        let windows = sliding_windows(&xs, &ys, 2).unwrap();
        let model = train_erm(&task, &windows, &small_cfg(4, 1, 6)).unwrap();
        for pair in model.train_trace.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-6,
                "loss increased: {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn train_fits_last_token() {
        // noiseless f*(x) = x_N, d_x = 1, N = 3
        let task = RegressionTask {
            f: Arc::new(|x: &[f64]| x[2]),
            window: 3,
            noise: 0.0,
            beta: 1.0,
            k: 1.0,
            d_x: 1,
        };
        let n = 2000;
        let xs = gen_sequence(&iid_cfg(11), n).unwrap();
        let ys: Vec<f64> = xs.iter().map(|t| t[0]).collect();
        let windows = sliding_windows(&xs, &ys, 3).unwrap();
        let model = train_erm(&task, &windows, &small_cfg(6, 1, 12)).unwrap();
        let test_cfg = iid_cfg(99);
        let est = excess_risk(&model.net, &task, 2000, &test_cfg).unwrap();
        assert!(est.mean <= 1e-2, "test MSE {}", est.mean);
    }

    #[test]
    fn trained_net_respects_clip() {
        let task = RegressionTask {
            f: Arc::new(|_| 0.9),
            window: 2,
            noise: 0.0,
            beta: 1.0,
            k: 0.3,
            d_x: 1,
        };
        let xs = gen_sequence(&iid_cfg(4), 40).unwrap();
        let ys = vec![0.9; 40];
        let windows = sliding_windows(&xs, &ys, 2).unwrap();
        let mut cfg = small_cfg(4, 1, 8);
        cfg.clip = 0.3;
        let model = train_erm(&task, &windows, &cfg).unwrap();
        for s in 0..50u64 {
            let xs = gen_sequence(&iid_cfg(1000 + s), 2).unwrap();
            let out = eval_rnn(&model.net, &TokenSequence::from_tokens(&xs)).unwrap();
            assert!(out[(0, 1)].abs() <= 0.3 + 1e-12);
        }
    }

    fn constant_net(c: f64) -> RecurrentNet {
        let mut net = RecurrentNet::new(
            Mat::zeros(1, 1),
            vec![RnnLayer {
                a: Mat::zeros(1, 1),
                b: Mat::zeros(1, 1),
                c: vec![c.abs()],
            }],
            Mat::from_rows(&[vec![c.signum()]]),
        );
        net.output_clip = Some(1.0);
        net
    }

    #[test]
    fn excess_risk_exact_fit_is_zero() {
        let task = RegressionTask {
            f: Arc::new(|_| 0.4),
            window: 2,
            noise: 0.0,
            beta: 1.0,
            k: 1.0,
            d_x: 1,
        };
        let est = excess_risk(&constant_net(0.4), &task, 1000, &iid_cfg(5)).unwrap();
        assert!(est.mean <= 1e-24);
    }

    #[test]
    fn excess_risk_constant_gap() {
        let c = 0.6;
        let task = RegressionTask {
            f: Arc::new(move |_| c),
            window: 2,
            noise: 0.0,
            beta: 1.0,
            k: 1.0,
            d_x: 1,
        };
        let est = excess_risk(&constant_net(0.0), &task, 5000, &iid_cfg(6)).unwrap();
        assert!((est.mean - c * c).abs() <= 3.0 * est.std_error.max(1e-12) + 1e-12);
    }

    #[test]
    fn excess_risk_self_consistent() {
        let task = RegressionTask {
            f: Arc::new(|x: &[f64]| 0.5 * x[1]),
            window: 2,
            noise: 0.0,
            beta: 1.0,
            k: 1.0,
            d_x: 1,
        };
        let net = constant_net(0.25);
        let small = excess_risk(&net, &task, 2000, &iid_cfg(7)).unwrap();
        let large = excess_risk(&net, &task, 20_000, &iid_cfg(8)).unwrap();
        let se = (small.std_error * small.std_error + large.std_error * large.std_error).sqrt();
        assert!((small.mean - large.mean).abs() <= 3.0 * se);
    }

    #[test]
    fn covering_bound_arithmetic() {
        let v = covering_bound(2, 2, 1.0, 10, 0.1).unwrap();
        assert!((v - 16.0 * 2.0f64.ln() * 100.0f64.ln()).abs() <= 1e-9);
        assert!((v - 51.07).abs() <= 0.01);
    }

    #[test]
    fn covering_bound_monotone_and_edge() {
        let base = covering_bound(3, 2, 1.0, 100, 0.1).unwrap();
        assert!(covering_bound(4, 2, 1.0, 100, 0.1).unwrap() >= base);
        assert!(covering_bound(3, 3, 1.0, 100, 0.1).unwrap() >= base);
        assert!(covering_bound(3, 2, 2.0, 100, 0.1).unwrap() >= base);
        assert!(covering_bound(3, 2, 1.0, 200, 0.1).unwrap() >= base);
        assert!(covering_bound(3, 2, 1.0, 100, 0.05).unwrap() >= base);
        let edge = covering_bound(1, 1, 1.0, 10, 0.1).unwrap();
        assert!((edge - 2.0f64.ln() * 100.0f64.ln()).abs() <= 1e-12);
        assert!(covering_bound(2, 2, 1.0, 1, 10.0).is_err());
    }

    #[test]
    fn schedule_exponents() {
        let (_, _, rate) = theory_schedule(100, 0.0, 1.0, 1, 2, ScheduleCase::ExpMixing).unwrap();
        assert!((rate - -0.5).abs() <= 1e-12);
        let (_, _, alg) =
            theory_schedule(100, 0.0, 1.0, 1, 2, ScheduleCase::AlgMixing { r: 1e6 }).unwrap();
        assert!((alg - -0.5).abs() <= 1e-5);
        // alpha at the upper endpoint: depth collapses to ceil(log n)
        let e = 2.0 / (2.0 * 2.0 + 4.0);
        let (w, l, _) = theory_schedule(1000, e, 1.0, 1, 2, ScheduleCase::ExpMixing).unwrap();
        assert_eq!(l, (1000.0f64.ln()).ceil() as usize);
        assert!(w > l);
        assert!(theory_schedule(1000, 0.9, 1.0, 1, 2, ScheduleCase::ExpMixing).is_err());
    }

    #[test]
    fn rate_experiment_degenerate_constant() {
        let task = RegressionTask {
            f: Arc::new(|_| 0.2),
            window: 2,
            noise: 0.0,
            beta: 1.0,
            k: 1.0,
            d_x: 1,
        };
        let cfg = iid_cfg(21);
        let template = TrainConfig {
            width: 4,
            depth: 1,
            clip: 1.0,
            learning_rate: 0.5,
            epochs: 300,
            restarts: 3,
            validation_fraction: 0.2,
            seed: 0,
        };
        let res = rate_experiment(&task, &cfg, &[32, 64, 128], 3, &template).unwrap();
        assert!(res.degenerate, "risks: {:?}", res.rows);
        for row in &res.rows {
            assert!(row.mean_risk <= 1e-3, "risk {}", row.mean_risk);
        }
    }
}
