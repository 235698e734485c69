use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;

use spherical::data::{random_split, synthetic_categorical, Dataset, MnistFiles, SplitSpec, SyntheticSpec};
use spherical::trainer::{train, RunMetrics};
use spherical::{Error, LossKind};

use crate::config::{DatasetKind, ExperimentConfig, SplitKind};
use crate::{CheckFailed, UsageError};

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Flat `key=value` config file; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of seeds per (loss, lr) pair; overrides the `seeds` key.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// `key=value` override, applied after the file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Directory for per-run logs and the effective config.
    #[arg(long, default_value = "runs")]
    pub out_dir: PathBuf,
}

/// The file, then the overrides, then `--seeds`.
pub fn load_config(args: &TrainArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
            ExperimentConfig::parse(&text).map_err(|e| UsageError(format!("{}: {}", path.display(), e.0)))?
        }
        None => ExperimentConfig::default(),
    };
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| UsageError(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k, v)?;
    }
    if let Some(n) = args.seeds {
        cfg.seeds = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub struct Splits {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

/// Loaded data, split per run where the protocol asks for it.
#[allow(clippy::large_enum_variant)]
pub enum DataSource {
    Fixed(Splits),
    /// Pooled examples, split anew with every run seed.
    Pooled(Dataset),
}

fn missing_mnist(dir: &Path) -> UsageError {
    UsageError(format!(
        "MNIST IDX files not found in {} (expected train-images-idx3-ubyte, train-labels-idx1-ubyte, \
         t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte, uncompressed); point data_dir at them with \
         --set data_dir=PATH",
        dir.display()
    ))
}

fn split_spec(cfg: &ExperimentConfig, seed: u64) -> SplitSpec {
    SplitSpec {
        train_n: cfg.train_n,
        valid_n: cfg.valid_n,
        test_n: cfg.test_n,
        seed,
    }
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<DataSource> {
    match cfg.dataset {
        DatasetKind::Mnist => {
            let files = MnistFiles::in_dir(&cfg.data_dir);
            if !files.exist() {
                return Err(missing_mnist(&cfg.data_dir).into());
            }
            let (train_all, test_all) = files.load()?;
            match cfg.split {
                SplitKind::Official => {
                    let tr: Vec<usize> = (0..cfg.train_n).collect();
                    let va: Vec<usize> = (cfg.train_n..cfg.train_n + cfg.valid_n).collect();
                    let te: Vec<usize> = (0..cfg.test_n.min(test_all.len())).collect();
                    Ok(DataSource::Fixed(Splits {
                        train: train_all.subset(&tr, "official-train"),
                        valid: train_all.subset(&va, "official-train-tail"),
                        test: test_all.subset(&te, "official-test"),
                    }))
                }
                SplitKind::Random => Ok(DataSource::Pooled(train_all.concat(&test_all)?)),
            }
        }
        DatasetKind::Synthetic => {
            let data = synthetic_categorical(&SyntheticSpec {
                num_classes: cfg.synthetic_classes,
                input_dim: cfg.synthetic_input_dim,
                n: cfg.synthetic_n,
                zipf_exponent: cfg.zipf_exponent,
                separation: cfg.separation,
                seed: cfg.data_seed,
            })
            .map_err(|e| UsageError(e.to_string()))?;
            match cfg.split {
                SplitKind::Official => {
                    let (train, valid, test) = random_split(&data, &split_spec(cfg, cfg.data_seed))?;
                    Ok(DataSource::Fixed(Splits { train, valid, test }))
                }
                SplitKind::Random => Ok(DataSource::Pooled(data)),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub loss: LossKind,
    pub lr: f64,
    pub seed: u64,
    /// `Err` holds the abort record of a diverged run.
    pub outcome: std::result::Result<RunMetrics, String>,
}

fn run_stem(loss: &LossKind, lr: f64, seed: u64) -> String {
    format!("{}-lr{}-seed{}", loss.name(), lr, seed)
}

/// Runs every (loss, lr, seed) combination. Logs go to `out_dir` when given,
/// one progress line per epoch to `progress`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    data: &DataSource,
    out_dir: Option<&Path>,
    progress: &mut dyn Write,
) -> Result<Vec<RunRecord>> {
    let spec = cfg.mlp_spec()?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        std::fs::write(dir.join("effective.cfg"), cfg.to_text())?;
    }
    let mut records = Vec::new();
    for loss in cfg.loss_kinds()? {
        for &lr in &cfg.lrs {
            for seed in cfg.run_seeds() {
                let pooled;
                let splits = match data {
                    DataSource::Fixed(s) => s,
                    DataSource::Pooled(all) => {
                        let (train, valid, test) = random_split(all, &split_spec(cfg, seed))?;
                        pooled = Splits { train, valid, test };
                        &pooled
                    }
                };
                let config = cfg.train_config(loss, lr, seed);
                let stem = run_stem(&loss, lr, seed);
                let mut epoch_log = String::from(spherical::trainer::EPOCH_CSV_HEADER);
                epoch_log.push('\n');
                let result = train(&spec, &config, &splits.train, &splits.valid, &splits.test, &mut |r| {
                    let _ = writeln!(epoch_log, "{}", r.csv_row());
                    let _ = writeln!(
                        progress,
                        "{stem} epoch {} lr {} train_loss {:.5} valid_loss {:.5} valid_error {:.4}",
                        r.epoch, r.lr, r.train_loss, r.valid_loss, r.valid_error
                    );
                });
                let outcome = match result {
                    Ok(run) => {
                        if let Some(dir) = out_dir {
                            std::fs::write(dir.join(format!("{stem}.epochs.csv")), &epoch_log)?;
                            std::fs::write(dir.join(format!("{stem}.metrics.txt")), run.metrics.to_flat_text())?;
                        }
                        Ok(run.metrics)
                    }
                    Err(e @ Error::Diverged { .. }) => {
                        let record = format!("status=diverged\nloss={}\nlr={lr}\nseed={seed}\nreason={e}\n", loss);
                        if let Some(dir) = out_dir {
                            std::fs::write(dir.join(format!("{stem}.epochs.csv")), &epoch_log)?;
                            std::fs::write(dir.join(format!("{stem}.abort.txt")), &record)?;
                        }
                        let _ = writeln!(progress, "{stem} aborted: {e}");
                        Err(record)
                    }
                    Err(e) => return Err(e.into()),
                };
                records.push(RunRecord {
                    loss,
                    lr,
                    seed,
                    outcome,
                });
            }
        }
    }
    Ok(records)
}

/// Mean and sample standard deviation (`n − 1` denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub loss: LossKind,
    pub lr: f64,
    pub runs: usize,
    pub diverged: usize,
    pub test_loss: (f64, f64),
    pub test_negll: (f64, f64),
    pub test_error: (f64, f64),
    pub top10_error: (f64, f64),
    pub best_epoch: (f64, f64),
}

/// Aggregates per (loss, lr), in first-seen order.
pub fn summarize(records: &[RunRecord]) -> Vec<Summary> {
    let mut keys: Vec<(LossKind, f64)> = Vec::new();
    for r in records {
        if !keys.contains(&(r.loss, r.lr)) {
            keys.push((r.loss, r.lr));
        }
    }
    keys.into_iter()
        .map(|(loss, lr)| {
            let group: Vec<&RunRecord> = records.iter().filter(|r| r.loss == loss && r.lr == lr).collect();
            let ok: Vec<&RunMetrics> = group.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
            let stat = |f: &dyn Fn(&RunMetrics) -> f64| mean_std(&ok.iter().map(|m| f(m)).collect::<Vec<_>>());
            Summary {
                loss,
                lr,
                runs: ok.len(),
                diverged: group.len() - ok.len(),
                test_loss: stat(&|m| m.test_loss),
                test_negll: stat(&|m| m.test_negll),
                test_error: stat(&|m| m.test_error),
                top10_error: stat(&|m| m.top10_error),
                best_epoch: stat(&|m| m.best_epoch as f64),
            }
        })
        .collect()
}

/// `loss function | loss | negll | error rate | number of epochs`, each cell a
/// mean with the standard deviation in parentheses.
pub fn format_table(summaries: &[Summary]) -> String {
    let mut rows = vec![[
        "loss function".to_string(),
        "lr".to_string(),
        "runs".to_string(),
        "loss".to_string(),
        "negll".to_string(),
        "error rate".to_string(),
        "number of epochs".to_string(),
    ]];
    for s in summaries {
        let prefix = if s.loss == LossKind::Mse { "mse" } else { s.loss.name() };
        let runs = if s.diverged > 0 {
            format!("{} (+{} diverged)", s.runs, s.diverged)
        } else {
            s.runs.to_string()
        };
        rows.push([
            s.loss.to_string(),
            s.lr.to_string(),
            runs,
            format!("{prefix}: {:.4} ({:.4})", s.test_loss.0, s.test_loss.1),
            format!("{:.4} ({:.4})", s.test_negll.0, s.test_negll.1),
            format!("{:.3}% ({:.3})", 100.0 * s.test_error.0, 100.0 * s.test_error.1),
            format!("{:.0} ({:.0})", s.best_epoch.0, s.best_epoch.1),
        ]);
    }
    let widths: Vec<usize> = (0..7).map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, &w)| format!("{cell:<w$}"))
            .collect();
        let _ = writeln!(out, "| {} |", cells.join(" | "));
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            let _ = writeln!(out, "|-{}-|", rule.join("-|-"));
        }
    }
    out
}

pub fn run(args: &TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let cfg = load_config(args)?;
    let data = load_data(&cfg)?;
    let records = run_experiment(&cfg, &data, Some(&args.out_dir), err)?;
    out.write_all(format_table(&summarize(&records)).as_bytes())?;
    let diverged: Vec<String> = records
        .iter()
        .filter(|r| r.outcome.is_err())
        .map(|r| run_stem(&r.loss, r.lr, r.seed))
        .collect();
    if diverged.is_empty() {
        Ok(())
    } else {
        Err(CheckFailed(format!("runs diverged: {}", diverged.join(", "))).into())
    }
}
