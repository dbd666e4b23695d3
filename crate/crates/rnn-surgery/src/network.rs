//! Network families and their exact evaluators.
//!
//! Three families live here: feedforward nets (affine + ReLU, final layer
//! affine only), recurrent nets (embedding P, recurrent layers (A, B, c),
//! projection Q, zero initial hidden state), and modified recurrent nets whose
//! activation applies only to a masked subset of units. Evaluation is pure and
//! deterministic; all weights are immutable after construction.

use crate::error::{Result, SurgeryError};
use crate::linalg::{relu, Mat};

/// A d_x x N input sequence; column t is the token x[t].
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub data: Mat,
}

impl TokenSequence {
    pub fn new(data: Mat) -> Self {
        assert!(data.rows >= 1 && data.cols >= 1, "empty sequence");
        TokenSequence { data }
    }

    pub fn from_tokens(tokens: &[Vec<f64>]) -> Self {
        let d = tokens[0].len();
        let n = tokens.len();
        let mut m = Mat::zeros(d, n);
        for (t, tok) in tokens.iter().enumerate() {
            assert_eq!(tok.len(), d, "ragged tokens");
            for i in 0..d {
                m[(i, t)] = tok[i];
            }
        }
        TokenSequence { data: m }
    }

    /// Scalar sequence, d_x = 1.
    pub fn scalar(values: &[f64]) -> Self {
        let mut m = Mat::zeros(1, values.len());
        for (t, v) in values.iter().enumerate() {
            m[(0, t)] = *v;
        }
        TokenSequence { data: m }
    }

    pub fn dim(&self) -> usize {
        self.data.rows
    }

    pub fn len(&self) -> usize {
        self.data.cols
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn token(&self, t: usize) -> Vec<f64> {
        (0..self.data.rows).map(|i| self.data[(i, t)]).collect()
    }

    /// Stacks tokens 1..=t0 into one vector (x[1]; x[2]; ...; x[t0]).
    pub fn stack_prefix(&self, t0: usize) -> Vec<f64> {
        assert!(t0 >= 1 && t0 <= self.len());
        let mut out = Vec::with_capacity(self.dim() * t0);
        for t in 0..t0 {
            out.extend(self.token(t));
        }
        out
    }
}

/// Feedforward net: x -> F_L(...F_1(x)), ReLU after layers 1..L-1, layer L
/// affine only. `layers[l] = (A, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedforwardNet {
    pub layers: Vec<(Mat, Vec<f64>)>,
}

impl FeedforwardNet {
    pub fn new(layers: Vec<(Mat, Vec<f64>)>) -> Self {
        assert!(!layers.is_empty());
        for (a, b) in &layers {
            assert_eq!(a.rows, b.len(), "bias length");
        }
        for w in layers.windows(2) {
            assert_eq!(w[1].0.cols, w[0].0.rows, "layer chain");
        }
        FeedforwardNet { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].0.cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().0.rows
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Number of hidden (ReLU) layers, depth - 1.
    pub fn relu_depth(&self) -> usize {
        self.layers.len() - 1
    }

    /// Max hidden layer width; for a single affine layer this is 0.
    pub fn width(&self) -> usize {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|(a, _)| a.rows)
            .max()
            .unwrap_or(0)
    }
}

pub fn eval_fnn(net: &FeedforwardNet, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != net.input_dim() {
        return Err(SurgeryError::Shape(format!(
            "fnn input dim {} but got {}",
            net.input_dim(),
            x.len()
        )));
    }
    let last = net.layers.len() - 1;
    let mut h = x.to_vec();
    for (l, (a, b)) in net.layers.iter().enumerate() {
        let mut z = a.matvec(&h);
        for (zi, bi) in z.iter_mut().zip(b) {
            *zi += bi;
        }
        if l < last {
            for zi in z.iter_mut() {
                *zi = relu(*zi);
            }
        }
        h = z;
    }
    Ok(h)
}

/// One recurrent layer: h[t] = act(A h[t-1] + B u[t] + c), h[0] = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnLayer {
    pub a: Mat,
    pub b: Mat,
    pub c: Vec<f64>,
}

/// Recurrent net Q . R_L . ... . R_1 . P with shared hidden width W and zero
/// initial state. `output_clip = Some(K)` clips every output entry to [-K, K].
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentNet {
    pub embed: Mat,
    pub layers: Vec<RnnLayer>,
    pub project: Mat,
    pub output_clip: Option<f64>,
}

impl RecurrentNet {
    pub fn new(embed: Mat, layers: Vec<RnnLayer>, project: Mat) -> Self {
        let net = RecurrentNet {
            embed,
            layers,
            project,
            output_clip: None,
        };
        net.check();
        net
    }

    fn check(&self) {
        let w = self.width();
        assert!(!self.layers.is_empty());
        assert_eq!(self.embed.rows, w, "embed rows");
        assert_eq!(self.project.cols, w, "project cols");
        for l in &self.layers {
            assert_eq!(l.a.rows, w, "A rows");
            assert_eq!(l.a.cols, w, "A cols");
            assert_eq!(l.b.rows, w, "B rows");
            assert_eq!(l.b.cols, w, "B cols");
            assert_eq!(l.c.len(), w, "c len");
        }
    }

    pub fn input_dim(&self) -> usize {
        self.embed.cols
    }

    pub fn output_dim(&self) -> usize {
        self.project.rows
    }

    pub fn width(&self) -> usize {
        self.layers[0].a.rows
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Same weights viewed as a modified recurrent net with every unit masked
    /// (full mask reduces sigma_I to the ordinary activation).
    pub fn as_mrnn(&self) -> ModifiedRecurrentNet {
        let w = self.width();
        ModifiedRecurrentNet {
            embed: self.embed.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| MrnnLayer {
                    a: l.a.clone(),
                    b: l.b.clone(),
                    c: l.c.clone(),
                    mask: vec![true; w],
                })
                .collect(),
            project: self.project.clone(),
            output_clip: self.output_clip,
        }
    }
}

/// Modified recurrent layer: unit i gets ReLU iff mask[i].
#[derive(Debug, Clone, PartialEq)]
pub struct MrnnLayer {
    pub a: Mat,
    pub b: Mat,
    pub c: Vec<f64>,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModifiedRecurrentNet {
    pub embed: Mat,
    pub layers: Vec<MrnnLayer>,
    pub project: Mat,
    pub output_clip: Option<f64>,
}

impl ModifiedRecurrentNet {
    pub fn new(embed: Mat, layers: Vec<MrnnLayer>, project: Mat) -> Self {
        let net = ModifiedRecurrentNet {
            embed,
            layers,
            project,
            output_clip: None,
        };
        let w = net.width();
        assert_eq!(net.embed.rows, w);
        assert_eq!(net.project.cols, w);
        for l in &net.layers {
            assert_eq!(l.a.rows, w);
            assert_eq!(l.a.cols, w);
            assert_eq!(l.b.rows, w);
            assert_eq!(l.b.cols, w);
            assert_eq!(l.c.len(), w);
            assert_eq!(l.mask.len(), w);
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        self.embed.cols
    }

    pub fn output_dim(&self) -> usize {
        self.project.rows
    }

    pub fn width(&self) -> usize {
        self.layers[0].a.rows
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }
}

fn clip_output(y: &mut [f64], clip: Option<f64>) {
    if let Some(k) = clip {
        for v in y.iter_mut() {
            *v = v.clamp(-k, k);
        }
    }
}

pub fn eval_rnn(net: &RecurrentNet, x: &TokenSequence) -> Result<Mat> {
    if x.dim() != net.input_dim() {
        return Err(SurgeryError::Shape(format!(
            "rnn input dim {} but sequence has {}",
            net.input_dim(),
            x.dim()
        )));
    }
    let w = net.width();
    let n = x.len();
    let mut states = vec![vec![0.0; w]; net.layers.len()];
    let mut out = Mat::zeros(net.output_dim(), n);
    for t in 0..n {
        let mut u = net.embed.matvec(&x.token(t));
        for (l, layer) in net.layers.iter().enumerate() {
            let mut z = layer.a.matvec(&states[l]);
            let bu = layer.b.matvec(&u);
            for i in 0..w {
                z[i] = relu(z[i] + bu[i] + layer.c[i]);
            }
            states[l] = z;
            u = states[l].clone();
        }
        let mut y = net.project.matvec(&u);
        clip_output(&mut y, net.output_clip);
        for (i, v) in y.iter().enumerate() {
            out[(i, t)] = *v;
        }
    }
    Ok(out)
}

pub fn eval_mrnn(net: &ModifiedRecurrentNet, x: &TokenSequence) -> Result<Mat> {
    if x.dim() != net.input_dim() {
        return Err(SurgeryError::Shape(format!(
            "mrnn input dim {} but sequence has {}",
            net.input_dim(),
            x.dim()
        )));
    }
    let w = net.width();
    let n = x.len();
    let mut states = vec![vec![0.0; w]; net.layers.len()];
    let mut out = Mat::zeros(net.output_dim(), n);
    for t in 0..n {
        let mut u = net.embed.matvec(&x.token(t));
        for (l, layer) in net.layers.iter().enumerate() {
            let mut z = layer.a.matvec(&states[l]);
            let bu = layer.b.matvec(&u);
            for i in 0..w {
                let pre = z[i] + bu[i] + layer.c[i];
                z[i] = if layer.mask[i] { relu(pre) } else { pre };
            }
            states[l] = z;
            u = states[l].clone();
        }
        let mut y = net.project.matvec(&u);
        clip_output(&mut y, net.output_clip);
        for (i, v) in y.iter().enumerate() {
            out[(i, t)] = *v;
        }
    }
    Ok(out)
}

/// Batch evaluation: column p of `xs` is one input point, column p of the
/// result the matching output. Equivalent to `eval_fnn` per column but runs
/// through `matmul`, which skips zero weights once per entry instead of once
/// per point; converted nets are sparse enough that this matters a lot.
pub fn eval_fnn_batch(net: &FeedforwardNet, xs: &Mat) -> Result<Mat> {
    if xs.rows != net.input_dim() {
        return Err(SurgeryError::Shape(format!(
            "fnn input dim {} but batch has {} rows",
            net.input_dim(),
            xs.rows
        )));
    }
    let last = net.layers.len() - 1;
    let mut h = xs.clone();
    for (l, (a, b)) in net.layers.iter().enumerate() {
        let mut z = a.matmul(&h);
        for i in 0..z.rows {
            for j in 0..z.cols {
                let v = z[(i, j)] + b[i];
                z[(i, j)] = if l < last { relu(v) } else { v };
            }
        }
        h = z;
    }
    Ok(h)
}

/// Batch evaluation of a recurrent net on P equal-length sequences.
/// `tokens[t]` is the d_x x P matrix of the step-t tokens; the result has one
/// d_y x P matrix per step.
pub fn eval_rnn_batch(net: &RecurrentNet, tokens: &[Mat]) -> Result<Vec<Mat>> {
    if tokens.is_empty() {
        return Err(SurgeryError::Invalid("empty batch sequence".into()));
    }
    let p = tokens[0].cols;
    for m in tokens {
        if m.rows != net.input_dim() || m.cols != p {
            return Err(SurgeryError::Shape("batch token shape mismatch".into()));
        }
    }
    let w = net.width();
    let mut states = vec![Mat::zeros(w, p); net.layers.len()];
    let mut out = Vec::with_capacity(tokens.len());
    for x in tokens {
        let mut u = net.embed.matmul(x);
        for (l, layer) in net.layers.iter().enumerate() {
            let az = layer.a.matmul(&states[l]);
            let mut z = layer.b.matmul(&u);
            for i in 0..w {
                for j in 0..p {
                    z[(i, j)] = relu(z[(i, j)] + az[(i, j)] + layer.c[i]);
                }
            }
            states[l] = z;
            u = states[l].clone();
        }
        let mut y = net.project.matmul(&u);
        if let Some(k) = net.output_clip {
            for v in y.data.iter_mut() {
                *v = v.clamp(-k, k);
            }
        }
        out.push(y);
    }
    Ok(out)
}

/// Sound per-layer, per-time activation ranges, by interval arithmetic.
///
/// Indexing: `pre[l][t][i]` is the pre-activation interval of unit i of layer
/// l at step t+1, `post` the value after the (masked) activation, and
/// `input_part[l][t][i]` the interval of (B u[t] + c)_i alone, which the
/// de-modification conversion needs separately.
#[derive(Debug, Clone)]
pub struct BoundTable {
    pub pre: Vec<Vec<Vec<(f64, f64)>>>,
    pub post: Vec<Vec<Vec<(f64, f64)>>>,
    pub input_part: Vec<Vec<Vec<(f64, f64)>>>,
}

impl BoundTable {
    /// Max of |lo|, |hi| over all entries of the given table slice.
    pub fn abs_bound(table: &[Vec<Vec<(f64, f64)>>]) -> f64 {
        let mut m: f64 = 0.0;
        for layer in table {
            for step in layer {
                for &(lo, hi) in step {
                    m = m.max(lo.abs()).max(hi.abs());
                }
            }
        }
        m
    }
}

/// Propagates per-entry token intervals through a modified recurrent net for
/// `horizon` steps. `domain[i]` bounds coordinate i of every token. The
/// returned intervals contain every reachable activation on the domain
/// (monotonicity of interval arithmetic); they are not claimed tight.
pub fn bound_propagate(
    net: &ModifiedRecurrentNet,
    domain: &[(f64, f64)],
    horizon: usize,
) -> Result<BoundTable> {
    if domain.len() != net.input_dim() {
        return Err(SurgeryError::Shape(format!(
            "domain has {} entries, input dim is {}",
            domain.len(),
            net.input_dim()
        )));
    }
    for &(lo, hi) in domain {
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(SurgeryError::Domain(
                "domain intervals must be finite and ordered".into(),
            ));
        }
    }
    if horizon == 0 {
        return Err(SurgeryError::Invalid("horizon must be >= 1".into()));
    }
    let w = net.width();
    let nl = net.layers.len();
    let emb = net.embed.interval_matvec(domain);

    let mut pre = vec![Vec::with_capacity(horizon); nl];
    let mut post = vec![Vec::with_capacity(horizon); nl];
    let mut input_part = vec![Vec::with_capacity(horizon); nl];
    // h[0] = 0 exactly for every layer.
    let mut state: Vec<Vec<(f64, f64)>> = vec![vec![(0.0, 0.0); w]; nl];

    for _t in 0..horizon {
        let mut u = emb.clone();
        for (l, layer) in net.layers.iter().enumerate() {
            let az = layer.a.interval_matvec(&state[l]);
            let bu = layer.b.interval_matvec(&u);
            let mut ip = vec![(0.0, 0.0); w];
            let mut pr = vec![(0.0, 0.0); w];
            let mut po = vec![(0.0, 0.0); w];
            for i in 0..w {
                ip[i] = (bu[i].0 + layer.c[i], bu[i].1 + layer.c[i]);
                pr[i] = (az[i].0 + ip[i].0, az[i].1 + ip[i].1);
                po[i] = if layer.mask[i] {
                    (relu(pr[i].0), relu(pr[i].1))
                } else {
                    pr[i]
                };
            }
            input_part[l].push(ip);
            pre[l].push(pr.clone());
            post[l].push(po.clone());
            state[l] = po.clone();
            u = po;
        }
    }
    Ok(BoundTable {
        pre,
        post,
        input_part,
    })
}
