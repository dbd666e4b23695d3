//! Command-line front end: conversions, verification, approximation demos,
//! bound calculators, and rate experiments.
//!
//! Exit codes: 0 success, 1 verification failed, 2 bad input, 3 shape error,
//! 4 training failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use rnn_surgery::approx::{
    assemble_sequence_approximator, sup_error_on_grid, ApproxBudget, PastDependentTarget,
};
use rnn_surgery::conversion::{fnn_to_rnn, mrnn_to_rnn, rnn_to_fnn};
use rnn_surgery::json::NetworkFile;
use rnn_surgery::network::{eval_fnn, eval_mrnn, eval_rnn, TokenSequence};
use rnn_surgery::regression::{
    covering_bound, rate_experiment, theory_schedule, MixingConfig, MixingKind, RegressionTask,
    ScheduleCase, TrainConfig,
};
use rnn_surgery::SurgeryError;

#[derive(Parser)]
#[command(
    name = "rnn-surgery",
    version,
    about = "Weight-level RNN/FNN surgery toolbox"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Direction {
    Fnn2rnn,
    Rnn2fnn,
    Mrnn2rnn,
}

#[derive(Clone, Copy, ValueEnum)]
enum CaseArg {
    ExpMixing,
    AlgMixing,
    Iid,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a network file between feedforward and recurrent forms.
    Convert {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        direction: Direction,
        #[arg(long)]
        t0: usize,
        /// Sequence length N the converted net is built for.
        #[arg(long = "len")]
        len: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample random inputs and report the max deviation between two networks.
    Verify {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        t0: usize,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-8)]
        threshold: f64,
        #[arg(long, default_value_t = 0.0)]
        domain_min: f64,
        #[arg(long, default_value_t = 1.0)]
        domain_max: f64,
    },
    /// Build the simultaneous approximator for catalog targets, emit a CSV.
    ApproxDemo {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the covering bound and the width/depth schedule.
    Bounds {
        #[arg(long, default_value_t = 2)]
        width: usize,
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[arg(long, default_value_t = 1.0)]
        clip: f64,
        #[arg(long = "len", default_value_t = 2)]
        len: usize,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = 1)]
        d_x: usize,
        #[arg(long, value_enum, default_value_t = CaseArg::ExpMixing)]
        case: CaseArg,
        /// Mixing rate r for the algebraic case.
        #[arg(long, default_value_t = 1.0)]
        r: f64,
    },
    /// Run a rate experiment from a config file, write CSV + summary + manifest.
    Regress {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config: serde_json::Value,
    seed: u64,
    tool_version: String,
    outputs: Vec<String>,
}

fn write_manifest(dir_or_file: &Path, m: &RunManifest) -> Result<(), SurgeryError> {
    let path = if dir_or_file.is_dir() {
        dir_or_file.join("manifest.json")
    } else {
        dir_or_file.with_extension("manifest.json")
    };
    let s = serde_json::to_string_pretty(m)?;
    std::fs::write(path, s + "\n")?;
    Ok(())
}

fn exit_code_for(e: &SurgeryError) -> u8 {
    match e {
        SurgeryError::Shape(_) => 3,
        SurgeryError::Diverged(_) => 4,
        _ => 2,
    }
}

/// Built-in target functions, defined for any input length.
fn catalog(name: &str) -> Option<Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>> {
    match name {
        "constant" => Some(Arc::new(|_: &[f64]| vec![0.4])),
        "last-token" => Some(Arc::new(|x: &[f64]| vec![x[x.len() - 1]])),
        "mean" => Some(Arc::new(|x: &[f64]| {
            vec![x.iter().sum::<f64>() / x.len() as f64]
        })),
        "mean-sinusoid" => Some(Arc::new(|x: &[f64]| {
            let m = x.iter().sum::<f64>() / x.len() as f64;
            vec![(2.0 * std::f64::consts::PI * m).sin() / 2.0]
        })),
        _ => None,
    }
}

fn catalog_scalar(name: &str) -> Option<Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>> {
    let f = catalog(name)?;
    Some(Arc::new(move |x: &[f64]| f(x)[0]))
}

#[derive(Debug, Deserialize, Serialize)]
struct ApproxConfig {
    /// Catalog names, one per time step (index i is the step-(i+1) target).
    targets: Vec<String>,
    resolutions: Vec<usize>,
    j: usize,
    i_d: usize,
    #[serde(default = "default_dx")]
    d_x: usize,
    #[serde(default = "default_k")]
    k: f64,
    #[serde(default = "default_grid")]
    grid_points: usize,
}

fn default_dx() -> usize {
    1
}
fn default_k() -> f64 {
    1.0
}
fn default_grid() -> usize {
    33
}

#[derive(Debug, Deserialize, Serialize)]
struct MixingSection {
    kind: String,
    #[serde(default)]
    rho: f64,
}

#[derive(Debug, Deserialize, Serialize)]
struct TrainSection {
    learning_rate: f64,
    epochs: usize,
    restarts: usize,
    validation_fraction: f64,
    clip: f64,
}

#[derive(Debug, Deserialize, Serialize)]
struct RegressConfig {
    target: String,
    window: usize,
    #[serde(default)]
    noise: f64,
    #[serde(default = "default_k")]
    k: f64,
    #[serde(default = "default_beta")]
    beta: f64,
    #[serde(default = "default_dx")]
    d_x: usize,
    mixing: MixingSection,
    ns: Vec<usize>,
    replications: usize,
    train: TrainSection,
    seed: u64,
}

fn default_beta() -> f64 {
    1.0
}

fn load_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, SurgeryError> {
    let text = std::fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| SurgeryError::Invalid(format!("bad TOML config: {e}")))
    } else {
        serde_json::from_str(&text).map_err(SurgeryError::Json)
    }
}

fn cmd_convert(
    input: &Path,
    direction: Direction,
    t0: usize,
    len: usize,
    out: &Path,
) -> Result<(), SurgeryError> {
    let file = NetworkFile::load(input)?;
    let converted = match direction {
        Direction::Fnn2rnn => {
            let fnn = file.into_fnn()?;
            let before = (fnn.width(), fnn.depth());
            let rnn = fnn_to_rnn(&fnn, t0, len)?;
            println!(
                "fnn W={} L={} -> rnn W={} L={}",
                before.0,
                before.1,
                rnn.width(),
                rnn.depth()
            );
            NetworkFile::from_rnn(&rnn)
        }
        Direction::Rnn2fnn => {
            let rnn = file.into_rnn()?;
            if t0 > len {
                return Err(SurgeryError::Shape(format!(
                    "t0 = {t0} exceeds len = {len}"
                )));
            }
            let before = (rnn.width(), rnn.depth());
            let fnn = rnn_to_fnn(&rnn, t0)?;
            println!(
                "rnn W={} L={} -> fnn W={} L={}",
                before.0,
                before.1,
                fnn.width(),
                fnn.depth()
            );
            NetworkFile::from_fnn(&fnn)
        }
        Direction::Mrnn2rnn => {
            let mrnn = file.into_mrnn()?;
            let before = (mrnn.width(), mrnn.depth());
            let domain = vec![(0.0, 1.0); mrnn.input_dim()];
            let rnn = mrnn_to_rnn(&mrnn, &domain, len)?;
            println!(
                "mrnn W={} L={} -> rnn W={} L={}",
                before.0,
                before.1,
                rnn.width(),
                rnn.depth()
            );
            NetworkFile::from_rnn(&rnn)
        }
    };
    converted.save(out)?;
    write_manifest(
        out,
        &RunManifest {
            command: "convert".into(),
            config: serde_json::json!({
                "in": input.display().to_string(),
                "t0": t0, "len": len,
            }),
            seed: 0,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            outputs: vec![out.display().to_string()],
        },
    )?;
    Ok(())
}

enum Loaded {
    Fnn(rnn_surgery::network::FeedforwardNet),
    Rnn(rnn_surgery::network::RecurrentNet),
    Mrnn(rnn_surgery::network::ModifiedRecurrentNet),
}

impl Loaded {
    fn from_file(f: NetworkFile) -> Result<Self, SurgeryError> {
        Ok(match &f {
            NetworkFile::Fnn { .. } => Loaded::Fnn(f.into_fnn()?),
            NetworkFile::Rnn { .. } => Loaded::Rnn(f.into_rnn()?),
            NetworkFile::Mrnn { .. } => Loaded::Mrnn(f.into_mrnn()?),
        })
    }

    /// Token dim if recurrent, else None.
    fn token_dim(&self) -> Option<usize> {
        match self {
            Loaded::Fnn(_) => None,
            Loaded::Rnn(n) => Some(n.input_dim()),
            Loaded::Mrnn(n) => Some(n.input_dim()),
        }
    }

    fn flat_dim(&self, t0: usize) -> usize {
        match self {
            Loaded::Fnn(n) => n.input_dim(),
            Loaded::Rnn(n) => n.input_dim() * t0,
            Loaded::Mrnn(n) => n.input_dim() * t0,
        }
    }

    fn output_dim(&self) -> usize {
        match self {
            Loaded::Fnn(n) => n.output_dim(),
            Loaded::Rnn(n) => n.output_dim(),
            Loaded::Mrnn(n) => n.output_dim(),
        }
    }

    /// Output at step t0 for recurrent operands, plain evaluation for FNNs.
    fn eval(&self, seq: &TokenSequence, t0: usize) -> Result<Vec<f64>, SurgeryError> {
        match self {
            Loaded::Fnn(n) => eval_fnn(n, &seq.stack_prefix(t0)),
            Loaded::Rnn(n) => {
                let out = eval_rnn(n, seq)?;
                Ok((0..out.rows).map(|i| out[(i, t0 - 1)]).collect())
            }
            Loaded::Mrnn(n) => {
                let out = eval_mrnn(n, seq)?;
                Ok((0..out.rows).map(|i| out[(i, t0 - 1)]).collect())
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_verify(
    a: &Path,
    b: &Path,
    t0: usize,
    samples: usize,
    seed: u64,
    threshold: f64,
    domain: (f64, f64),
) -> Result<bool, SurgeryError> {
    if t0 < 1 {
        return Err(SurgeryError::Invalid("t0 must be >= 1".into()));
    }
    let na = Loaded::from_file(NetworkFile::load(a)?)?;
    let nb = Loaded::from_file(NetworkFile::load(b)?)?;
    let d_x = match (na.token_dim(), nb.token_dim()) {
        (Some(d), _) | (None, Some(d)) => d,
        (None, None) => {
            let d = na.flat_dim(t0);
            if d % t0 != 0 {
                return Err(SurgeryError::Shape(format!(
                    "fnn input dim {d} is not divisible by t0 = {t0}"
                )));
            }
            d / t0
        }
    };
    if na.flat_dim(t0) != d_x * t0 || nb.flat_dim(t0) != d_x * t0 {
        return Err(SurgeryError::Shape(format!(
            "incompatible input dims: {} vs {} for t0 = {t0}",
            na.flat_dim(t0),
            nb.flat_dim(t0)
        )));
    }
    if na.output_dim() != nb.output_dim() {
        return Err(SurgeryError::Shape(format!(
            "output dims differ: {} vs {}",
            na.output_dim(),
            nb.output_dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = domain;
    if !(lo < hi) {
        return Err(SurgeryError::Invalid("empty sample domain".into()));
    }
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let toks: Vec<Vec<f64>> = (0..t0)
            .map(|_| (0..d_x).map(|_| rng.gen_range(lo..hi)).collect())
            .collect();
        let seq = TokenSequence::from_tokens(&toks);
        let ya = na.eval(&seq, t0)?;
        let yb = nb.eval(&seq, t0)?;
        for (u, v) in ya.iter().zip(&yb) {
            worst = worst.max((u - v).abs());
        }
    }
    println!("max |a - b| over {samples} samples at step {t0}: {worst:e}");
    Ok(worst <= threshold)
}

fn cmd_approx_demo(config_path: &Path, out: &Path) -> Result<(), SurgeryError> {
    let cfg: ApproxConfig = load_config(config_path)?;
    if cfg.targets.is_empty() || cfg.resolutions.is_empty() {
        return Err(SurgeryError::Invalid(
            "need at least one target and resolution".into(),
        ));
    }
    let budget = ApproxBudget::new(cfg.j, cfg.i_d)?;
    let mut targets = Vec::new();
    for (i, name) in cfg.targets.iter().enumerate() {
        let f = catalog(name)
            .ok_or_else(|| SurgeryError::Invalid(format!("unknown target '{name}'")))?;
        targets.push(PastDependentTarget::new(i + 1, cfg.d_x, 1, 1.0, cfg.k, f)?);
    }
    let mut csv = String::from("t,resolution,j,i_d,measured_sup_error,width,depth\n");
    for &res in &cfg.resolutions {
        let net = assemble_sequence_approximator(&targets, &budget, res)?;
        for tg in &targets {
            let err = sup_error_on_grid(&net, tg, cfg.grid_points)?;
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                tg.t,
                res,
                cfg.j,
                cfg.i_d,
                err,
                net.width(),
                net.depth()
            ));
        }
    }
    std::fs::write(out, &csv)?;
    write_manifest(
        out,
        &RunManifest {
            command: "approx-demo".into(),
            config: serde_json::to_value(&cfg)?,
            seed: 0,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            outputs: vec![out.display().to_string()],
        },
    )?;
    println!("wrote {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_bounds(
    width: usize,
    depth: usize,
    clip: f64,
    len: usize,
    n: usize,
    delta: f64,
    alpha: f64,
    beta: f64,
    d_x: usize,
    case: CaseArg,
    r: f64,
) -> Result<(), SurgeryError> {
    let cb = covering_bound(width, depth, clip, n, delta)?;
    let sc = match case {
        CaseArg::ExpMixing => ScheduleCase::ExpMixing,
        CaseArg::AlgMixing => ScheduleCase::AlgMixing { r },
        CaseArg::Iid => ScheduleCase::Iid,
    };
    let (w, l, rate) = theory_schedule(n, alpha, beta, d_x, len, sc)?;
    println!("covering bound (W={width}, L={depth}, K={clip}, n={n}, delta={delta}): {cb:.4}");
    println!("schedule      (n={n}, alpha={alpha}, beta={beta}, d_x={d_x}, N={len}):");
    println!("  W = {w}");
    println!("  L = {l}");
    println!("  rate exponent = {rate:.6}");
    Ok(())
}

fn cmd_regress(config_path: &Path, out_dir: &Path) -> Result<(), SurgeryError> {
    let cfg: RegressConfig = load_config(config_path)?;
    let f = catalog_scalar(&cfg.target)
        .ok_or_else(|| SurgeryError::Invalid(format!("unknown target '{}'", cfg.target)))?;
    let task = RegressionTask {
        f,
        window: cfg.window,
        noise: cfg.noise,
        beta: cfg.beta,
        k: cfg.k,
        d_x: cfg.d_x,
    };
    let kind = match cfg.mixing.kind.as_str() {
        "iid" => MixingKind::Iid,
        "exponential" | "exponential_mixing" => MixingKind::ExponentialMixing,
        other => {
            return Err(SurgeryError::Invalid(format!(
                "unknown mixing kind '{other}'"
            )))
        }
    };
    let mix = MixingConfig {
        kind,
        rho: cfg.mixing.rho,
        d_x: cfg.d_x,
        seed: cfg.seed,
    };
    let template = TrainConfig {
        width: 1,
        depth: 1,
        clip: cfg.train.clip,
        learning_rate: cfg.train.learning_rate,
        epochs: cfg.train.epochs,
        restarts: cfg.train.restarts,
        validation_fraction: cfg.train.validation_fraction,
        seed: cfg.seed,
    };
    let result = rate_experiment(&task, &mix, &cfg.ns, cfg.replications, &template)?;

    std::fs::create_dir_all(out_dir)?;
    let mut csv = String::from("n,replication,excess_risk,w,l,wall_seconds\n");
    for rec in &result.detail {
        csv.push_str(&format!(
            "{},{},{},{},{},{:.3}\n",
            rec.n, rec.replication, rec.excess_risk, rec.width, rec.depth, rec.wall_seconds
        ));
    }
    let csv_path = out_dir.join("risks.csv");
    std::fs::write(&csv_path, &csv)?;

    let summary = serde_json::json!({
        "slope": result.slope,
        "theory_exponent": result.theory_exponent,
        "degenerate": result.degenerate,
        "per_n": result.rows.iter().map(|r| serde_json::json!({
            "n": r.n, "mean_risk": r.mean_risk, "std_risk": r.std_risk,
        })).collect::<Vec<_>>(),
    });
    let summary_path = out_dir.join("summary.json");
    std::fs::write(
        &summary_path,
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;

    write_manifest(
        out_dir,
        &RunManifest {
            command: "regress".into(),
            config: serde_json::to_value(&cfg)?,
            seed: cfg.seed,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            outputs: vec![
                csv_path.display().to_string(),
                summary_path.display().to_string(),
            ],
        },
    )?;
    println!(
        "slope {:.4} (theory {:.4}); wrote {}",
        result.slope,
        result.theory_exponent,
        out_dir.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<bool, SurgeryError> {
    match cli.command {
        Command::Convert {
            input,
            direction,
            t0,
            len,
            out,
        } => {
            cmd_convert(&input, direction, t0, len, &out)?;
            Ok(true)
        }
        Command::Verify {
            a,
            b,
            t0,
            samples,
            seed,
            threshold,
            domain_min,
            domain_max,
        } => cmd_verify(
            &a,
            &b,
            t0,
            samples,
            seed,
            threshold,
            (domain_min, domain_max),
        ),
        Command::ApproxDemo { config, out } => {
            cmd_approx_demo(&config, &out)?;
            Ok(true)
        }
        Command::Bounds {
            width,
            depth,
            clip,
            len,
            n,
            delta,
            alpha,
            beta,
            d_x,
            case,
            r,
        } => {
            cmd_bounds(width, depth, clip, len, n, delta, alpha, beta, d_x, case, r)?;
            Ok(true)
        }
        Command::Regress { config, out } => {
            cmd_regress(&config, &out)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    if let Ok(v) = std::env::var("RNN_SURGERY_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
