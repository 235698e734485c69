use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spherical::loss::{finite_diff_grad, relative_error, Epsilon, LogitsVector, FD_STEP};
use spherical::LossKind;

use crate::{emit, CheckFailed, UsageError};

/// Per-trial relative error a gradient must stay below.
pub const TOLERANCE: f64 = 1e-5;

/// Points this close to the kink of `|o|` are redrawn for the abs variant.
pub const KINK_EXCLUSION: f64 = 1e-3;

pub const CSV_HEADER: &str = "loss,D,trial,max_rel_err";

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    /// A loss name, or `all`.
    #[arg(long, default_value = "all")]
    pub loss: String,
    #[arg(long, value_delimiter = ',', default_value = "2,10,1000")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Smoothing values tried for the spherical softmax.
    #[arg(long, value_delimiter = ',', default_value = "1e-4,0.0198,1")]
    pub eps: Vec<f64>,
    /// ξ of the fixed-ξ bound.
    #[arg(long, default_value_t = 1.0)]
    pub xi: f64,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub loss: String,
    pub dim: usize,
    pub trial: usize,
    pub rel_err: f64,
}

/// The loss variants named by `name`, one per `eps` for the spherical softmax.
pub fn variants(name: &str, eps: &[f64], xi: f64) -> Result<Vec<LossKind>, UsageError> {
    let names: Vec<&str> = if name == "all" {
        LossKind::NAMES.to_vec()
    } else {
        vec![name]
    };
    let mut out = Vec::new();
    for n in names {
        if n == "log_spherical" {
            for &e in eps {
                let e = Epsilon::new(e).map_err(|e| UsageError(e.to_string()))?;
                out.push(LossKind::LogSpherical { eps: e });
            }
        } else {
            out.push(LossKind::parse(n, Epsilon::default(), xi).map_err(|e| UsageError(e.to_string()))?);
        }
    }
    Ok(out)
}

fn stream_seed(seed: u64, label: &str, dim: usize) -> u64 {
    // FNV-1a, so each (loss, D) stream is independent of which others run.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in label.bytes().chain(dim.to_le_bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Draws `o ~ U[−3, 3]^D` and a uniform target, compares gradients.
pub fn check(loss: &LossKind, dim: usize, trials: usize, seed: u64) -> Vec<TrialResult> {
    let label = loss.to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &label, dim));
    (0..trials)
        .map(|trial| {
            let values: Vec<f64> = (0..dim)
                .map(|_| loop {
                    let v: f64 = rng.random_range(-3.0..3.0);
                    if *loss != LossKind::LogSoftmaxAbs || v.abs() >= KINK_EXCLUSION {
                        break v;
                    }
                })
                .collect();
            let o = LogitsVector::new(values).expect("finite draws");
            let c = o.target(rng.random_range(0..dim)).expect("in range");
            let analytic = loss.eval(&o, c).grad_o;
            let numeric = finite_diff_grad(|p, t| loss.eval(p, t).loss, &o, c, FD_STEP);
            TrialResult {
                loss: label.clone(),
                dim,
                trial,
                rel_err: relative_error(&analytic, &numeric),
            }
        })
        .collect()
}

pub fn run(args: &GradcheckArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    if args.dims.iter().any(|&d| d < 2) {
        return Err(UsageError("every D must be at least 2".into()).into());
    }
    if args.trials == 0 {
        return Err(UsageError("trials must be positive".into()).into());
    }
    let losses = variants(&args.loss, &args.eps, args.xi)?;
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    let mut worst: Option<TrialResult> = None;
    let mut failures = 0;
    for loss in &losses {
        for &dim in &args.dims {
            for r in check(loss, dim, args.trials, args.seed) {
                let _ = writeln!(csv, "{},{},{},{:e}", r.loss, r.dim, r.trial, r.rel_err);
                failures += !(r.rel_err < TOLERANCE) as usize;
                if worst.as_ref().is_none_or(|w| !(r.rel_err <= w.rel_err)) {
                    worst = Some(r);
                }
            }
        }
    }
    emit(args.out.as_deref(), out, &csv)?;
    let w = worst.expect("at least one trial");
    let total = losses.len() * args.dims.len() * args.trials;
    writeln!(
        err,
        "gradcheck: {total} trials, {failures} above {TOLERANCE:e}; worst {} D={} trial={} rel_err={:e}",
        w.loss, w.dim, w.trial, w.rel_err
    )?;
    if failures > 0 {
        return Err(CheckFailed(format!(
            "{failures} trials exceed {TOLERANCE:e}, worst {} at D={} trial {}: {:e}",
            w.loss, w.dim, w.trial, w.rel_err
        ))
        .into());
    }
    Ok(())
}
