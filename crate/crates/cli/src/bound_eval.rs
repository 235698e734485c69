use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spherical::bound::{spherical_bound_loss, XiParam};
use spherical::data::{random_split, synthetic_categorical, SplitSpec, SyntheticSpec};
use spherical::loss::LogitsVector;
use spherical::trainer::{evaluate, init_model, train, BiasInit, MlpSpec, TrainConfig};
use spherical::LossKind;

use crate::{emit, CheckFailed, UsageError};

/// Rounding slack allowed below the exact loss.
pub const VALIDITY_TOL: f64 = 1e-9;
/// Slack allowed for the optimized bound above a fixed-ξ one.
pub const TIGHTNESS_TOL: f64 = 1e-8;

pub const CSV_HEADER: &str = "D,sample,xi_mode,xi,true_loss,bound,gap";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum XiModeArg {
    Fixed,
    Optimized,
    All,
}

#[derive(Debug, Clone, Args)]
pub struct BoundEvalArgs {
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, value_delimiter = ',', default_value = "2,10,100,1000")]
    pub dims: Vec<usize>,
    #[arg(long, value_enum, default_value_t = XiModeArg::All)]
    pub xi_mode: XiModeArg,
    /// ξ values of the fixed mode.
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,2")]
    pub xi: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also train a linear model on synthetic data by minimizing the bound and
    /// report its log-softmax negll before and after.
    #[arg(long)]
    pub train_probe: bool,
    /// Class-mean scale of the probe's synthetic features. Small values leave the
    /// class frequencies as most of what can be learned.
    #[arg(long, default_value_t = 0.25)]
    pub probe_separation: f64,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub dim: usize,
    pub sample: usize,
    /// `None` for the optimized mode.
    pub fixed_xi: Option<f64>,
    pub xi: f64,
    pub true_loss: f64,
    pub bound: f64,
}

impl Row {
    pub fn gap(&self) -> f64 {
        self.bound - self.true_loss
    }
}

/// Bound rows for random `o ~ U[−3, 3]^D` and uniform targets: the optimized
/// mode first, then each fixed `ξ`, for every sample.
pub fn evaluate_bounds(dims: &[usize], samples: usize, fixed: &[f64], optimized: bool, seed: u64) -> Vec<Row> {
    let mut rows = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &dim in dims {
        for sample in 0..samples {
            let o = LogitsVector::new((0..dim).map(|_| rng.random_range(-3.0..3.0)).collect()).expect("finite");
            let c = o.target(rng.random_range(0..dim)).expect("in range");
            let modes = optimized
                .then_some((None, XiParam::optimized()))
                .into_iter()
                .chain(fixed.iter().map(|&x| (Some(x), XiParam::fixed(x))));
            for (fixed_xi, param) in modes {
                let (lg, info) = spherical_bound_loss(&o, c, param);
                rows.push(Row {
                    dim,
                    sample,
                    fixed_xi,
                    xi: info.xi,
                    true_loss: info.true_loss.expect("dense evaluation sets it"),
                    bound: lg.loss,
                });
            }
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub loss: String,
    pub separation: f64,
    pub initial_bound: f64,
    pub final_bound: f64,
    pub initial_negll: f64,
    pub final_negll: f64,
    pub epochs_run: usize,
}

impl ProbeReport {
    pub fn to_text(&self) -> String {
        let improved = self.final_negll < self.initial_negll - 0.05;
        format!(
            "probe_loss={}\nprobe_separation={}\nprobe_initial_bound={}\nprobe_final_bound={}\nprobe_initial_negll={}\n\
             probe_final_negll={}\nprobe_negll_change={}\nprobe_epochs={}\nprobe_negll_improved_by_0.05={}\n",
            self.loss,
            self.separation,
            self.initial_bound,
            self.final_bound,
            self.initial_negll,
            self.final_negll,
            self.final_negll - self.initial_negll,
            self.epochs_run,
            improved
        )
    }
}

/// Prior-initialized linear model on a 100-class synthetic task trained on the
/// bound; negll is the log-softmax of the same logits on held-out data.
pub fn train_probe(loss: LossKind, separation: f64, seed: u64) -> Result<ProbeReport> {
    let data = synthetic_categorical(&SyntheticSpec {
        num_classes: 100,
        input_dim: 20,
        n: 12_000,
        zipf_exponent: 1.0,
        separation,
        seed,
    })?;
    let (tr, va, te) = random_split(
        &data,
        &SplitSpec {
            train_n: 8000,
            valid_n: 2000,
            test_n: 2000,
            seed,
        },
    )?;
    let spec = MlpSpec::new(20, vec![], 100)?;
    let mut config = TrainConfig::new(loss, 0.01);
    config.bias_init = BiasInit::Prior;
    config.max_epochs = 30;
    config.seed = seed;
    let initial = init_model(&spec, &config, &tr, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let before = evaluate(&initial, &te, &loss)?;
    let run = train(&spec, &config, &tr, &va, &te, &mut |_| {})?;
    Ok(ProbeReport {
        loss: loss.to_string(),
        separation,
        initial_bound: before.loss,
        final_bound: run.metrics.test_loss,
        initial_negll: before.negll,
        final_negll: run.metrics.test_negll,
        epochs_run: run.metrics.epochs_run,
    })
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

pub fn run(args: &BoundEvalArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    if args.samples == 0 || args.dims.iter().any(|&d| d < 2) {
        return Err(UsageError("samples must be positive and every D at least 2".into()).into());
    }
    if args.xi.iter().any(|x| !x.is_finite()) {
        return Err(UsageError("fixed ξ values must be finite".into()).into());
    }
    let optimized = args.xi_mode != XiModeArg::Fixed;
    let fixed: &[f64] = if args.xi_mode == XiModeArg::Optimized { &[] } else { &args.xi };
    let rows = evaluate_bounds(&args.dims, args.samples, fixed, optimized, args.seed);

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        let mode = if r.fixed_xi.is_some() { "fixed" } else { "optimized" };
        let _ = writeln!(csv, "{},{},{},{},{},{},{:e}", r.dim, r.sample, mode, r.xi, r.true_loss, r.bound, r.gap());
    }
    emit(args.out.as_deref(), out, &csv)?;

    let mut problems = Vec::new();
    let min_gap = rows.iter().map(Row::gap).fold(f64::INFINITY, f64::min);
    if min_gap < -VALIDITY_TOL {
        problems.push(format!("bound below the exact loss by {:e}", -min_gap));
    }
    if optimized {
        writeln!(err, "mean gap optimized: {:.6}", mean(rows.iter().filter(|r| r.fixed_xi.is_none()).map(Row::gap)))?;
        let per_sample = 1 + fixed.len();
        for group in rows.chunks(per_sample) {
            let opt = &group[0];
            if let Some(r) = group[1..].iter().find(|r| opt.bound > r.bound + TIGHTNESS_TOL) {
                problems.push(format!(
                    "optimized bound {} above fixed ξ={} bound {} (D={}, sample {})",
                    opt.bound, r.xi, r.bound, r.dim, r.sample
                ));
                break;
            }
        }
    }
    for &x in fixed {
        let m = mean(rows.iter().filter(|r| r.fixed_xi == Some(x)).map(Row::gap));
        writeln!(err, "mean gap fixed xi={x}: {m:.6}")?;
    }
    writeln!(err, "min gap: {min_gap:e}")?;

    if args.train_probe {
        let loss = if optimized {
            LossKind::BoundOptimized
        } else {
            LossKind::BoundFixed { xi: args.xi[0] }
        };
        let report = train_probe(loss, args.probe_separation, args.seed)?;
        write!(err, "{}", report.to_text())?;
    }

    if problems.is_empty() {
        Ok(())
    } else {
        Err(CheckFailed(problems.join("; ")).into())
    }
}
