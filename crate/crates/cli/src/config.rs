//! Flat `key=value` experiment configuration.

use std::fmt::Write as _;
use std::path::PathBuf;

use spherical::loss::Epsilon;
use spherical::trainer::{BiasInit, MlpSpec, OutputKind, TrainConfig};
use spherical::LossKind;

use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    /// Train and valid from the official training file, test is the official test file.
    Official,
    /// Both official files pooled, then a seeded random split per run.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasChoice {
    /// Zero for MNIST, prior-matched for synthetic data and for even losses.
    Auto,
    Zero,
    Prior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub data_dir: PathBuf,
    pub split: SplitKind,
    pub train_n: usize,
    pub valid_n: usize,
    pub test_n: usize,
    pub synthetic_classes: usize,
    pub synthetic_input_dim: usize,
    pub synthetic_n: usize,
    pub zipf_exponent: f64,
    pub separation: f64,
    pub data_seed: u64,
    pub hidden: Vec<usize>,
    pub losses: Vec<String>,
    pub lrs: Vec<f64>,
    pub eps: f64,
    pub xi: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub lr_decay_factor: f64,
    pub max_epochs: usize,
    pub max_halvings: usize,
    pub seed: u64,
    pub seeds: usize,
    pub output_layer: OutputKind,
    pub bias_init: BiasChoice,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Mnist,
            data_dir: PathBuf::from("data/mnist"),
            split: SplitKind::Official,
            train_n: 50_000,
            valid_n: 10_000,
            test_n: 10_000,
            synthetic_classes: 100,
            synthetic_input_dim: 20,
            synthetic_n: 20_000,
            zipf_exponent: 1.0,
            separation: 1.0,
            data_seed: 0,
            hidden: vec![500, 500],
            losses: vec!["log_softmax".into()],
            lrs: vec![0.05],
            eps: 0.01,
            xi: 1.0,
            momentum: 0.9,
            batch_size: 200,
            patience: 5,
            lr_decay_factor: 0.5,
            max_epochs: 50,
            max_halvings: 10,
            seed: 0,
            seeds: 1,
            output_layer: OutputKind::Dense,
            bias_init: BiasChoice::Auto,
        }
    }
}

fn usage(msg: impl Into<String>) -> UsageError {
    UsageError(msg.into())
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, UsageError> {
    value
        .parse()
        .map_err(|_| usage(format!("invalid value `{value}` for `{key}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, UsageError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Applies one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), UsageError> {
        let v = value.trim();
        match key.trim() {
            "dataset" => {
                self.dataset = match v {
                    "mnist" => DatasetKind::Mnist,
                    "synthetic" => DatasetKind::Synthetic,
                    _ => return Err(usage(format!("dataset must be mnist or synthetic, got `{v}`"))),
                }
            }
            "data_dir" => self.data_dir = PathBuf::from(v),
            "split" => {
                self.split = match v {
                    "official" => SplitKind::Official,
                    "random" => SplitKind::Random,
                    _ => return Err(usage(format!("split must be official or random, got `{v}`"))),
                }
            }
            "train_n" => self.train_n = parse_num("train_n", v)?,
            "valid_n" => self.valid_n = parse_num("valid_n", v)?,
            "test_n" => self.test_n = parse_num("test_n", v)?,
            "synthetic_classes" => self.synthetic_classes = parse_num("synthetic_classes", v)?,
            "synthetic_input_dim" => self.synthetic_input_dim = parse_num("synthetic_input_dim", v)?,
            "synthetic_n" => self.synthetic_n = parse_num("synthetic_n", v)?,
            "zipf_exponent" => self.zipf_exponent = parse_num("zipf_exponent", v)?,
            "separation" => self.separation = parse_num("separation", v)?,
            "data_seed" => self.data_seed = parse_num("data_seed", v)?,
            "hidden" => self.hidden = parse_list("hidden", v)?,
            "loss" => self.losses = v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
            "lr" => self.lrs = parse_list("lr", v)?,
            "eps" => self.eps = parse_num("eps", v)?,
            "xi" => self.xi = parse_num("xi", v)?,
            "momentum" => self.momentum = parse_num("momentum", v)?,
            "batch_size" => self.batch_size = parse_num("batch_size", v)?,
            "patience" => self.patience = parse_num("patience", v)?,
            "lr_decay_factor" => self.lr_decay_factor = parse_num("lr_decay_factor", v)?,
            "max_epochs" => self.max_epochs = parse_num("max_epochs", v)?,
            "max_halvings" => self.max_halvings = parse_num("max_halvings", v)?,
            "seed" => self.seed = parse_num("seed", v)?,
            "seeds" => self.seeds = parse_num("seeds", v)?,
            "output_layer" => {
                self.output_layer = match v {
                    "dense" => OutputKind::Dense,
                    "factored" => OutputKind::Factored,
                    _ => return Err(usage(format!("output_layer must be dense or factored, got `{v}`"))),
                }
            }
            "bias_init" => {
                self.bias_init = match v {
                    "auto" => BiasChoice::Auto,
                    "zero" => BiasChoice::Zero,
                    "prior" => BiasChoice::Prior,
                    _ => return Err(usage(format!("bias_init must be auto, zero or prior, got `{v}`"))),
                }
            }
            other => return Err(usage(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, UsageError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(usage(format!("line {}: expected key=value, got `{line}`", lineno + 1)));
            };
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(usage(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
            cfg.set(key, value)
                .map_err(|e| usage(format!("line {}: {}", lineno + 1, e.0)))?;
        }
        Ok(cfg)
    }

    /// Every key, in a form [`ExperimentConfig::parse`] reads back unchanged.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        kv(
            "dataset",
            match self.dataset {
                DatasetKind::Mnist => "mnist",
                DatasetKind::Synthetic => "synthetic",
            }
            .into(),
        );
        kv("data_dir", self.data_dir.display().to_string());
        kv(
            "split",
            match self.split {
                SplitKind::Official => "official",
                SplitKind::Random => "random",
            }
            .into(),
        );
        kv("train_n", self.train_n.to_string());
        kv("valid_n", self.valid_n.to_string());
        kv("test_n", self.test_n.to_string());
        kv("synthetic_classes", self.synthetic_classes.to_string());
        kv("synthetic_input_dim", self.synthetic_input_dim.to_string());
        kv("synthetic_n", self.synthetic_n.to_string());
        kv("zipf_exponent", self.zipf_exponent.to_string());
        kv("separation", self.separation.to_string());
        kv("data_seed", self.data_seed.to_string());
        kv("hidden", join(&self.hidden));
        kv("loss", self.losses.join(","));
        kv("lr", join(&self.lrs));
        kv("eps", self.eps.to_string());
        kv("xi", self.xi.to_string());
        kv("momentum", self.momentum.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("patience", self.patience.to_string());
        kv("lr_decay_factor", self.lr_decay_factor.to_string());
        kv("max_epochs", self.max_epochs.to_string());
        kv("max_halvings", self.max_halvings.to_string());
        kv("seed", self.seed.to_string());
        kv("seeds", self.seeds.to_string());
        kv(
            "output_layer",
            match self.output_layer {
                OutputKind::Dense => "dense",
                OutputKind::Factored => "factored",
            }
            .into(),
        );
        kv(
            "bias_init",
            match self.bias_init {
                BiasChoice::Auto => "auto",
                BiasChoice::Zero => "zero",
                BiasChoice::Prior => "prior",
            }
            .into(),
        );
        out
    }

    pub fn loss_kinds(&self) -> Result<Vec<LossKind>, UsageError> {
        let eps = Epsilon::new(self.eps).map_err(|e| usage(e.to_string()))?;
        if self.losses.is_empty() {
            return Err(usage("at least one loss is required"));
        }
        self.losses
            .iter()
            .map(|name| LossKind::parse(name, eps, self.xi).map_err(|e| usage(e.to_string())))
            .collect()
    }

    pub fn bias_for(&self, loss: &LossKind) -> BiasInit {
        match self.bias_init {
            BiasChoice::Zero => BiasInit::Zero,
            BiasChoice::Prior => BiasInit::Prior,
            BiasChoice::Auto if self.dataset == DatasetKind::Synthetic || loss.is_even() => BiasInit::Prior,
            BiasChoice::Auto => BiasInit::Zero,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self.dataset {
            DatasetKind::Mnist => 10,
            DatasetKind::Synthetic => self.synthetic_classes,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self.dataset {
            DatasetKind::Mnist => 28 * 28,
            DatasetKind::Synthetic => self.synthetic_input_dim,
        }
    }

    pub fn mlp_spec(&self) -> Result<MlpSpec, UsageError> {
        MlpSpec::new(self.input_dim(), self.hidden.clone(), self.num_classes()).map_err(|e| usage(e.to_string()))
    }

    pub fn train_config(&self, loss: LossKind, lr: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            loss,
            initial_lr: lr,
            momentum: self.momentum,
            batch_size: self.batch_size,
            patience: self.patience,
            lr_decay_factor: self.lr_decay_factor,
            max_epochs: self.max_epochs,
            max_halvings: self.max_halvings,
            seed,
            output_layer: self.output_layer,
            bias_init: self.bias_for(&loss),
        }
    }

    /// Seeds of the individual runs.
    pub fn run_seeds(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|k| self.seed + k).collect()
    }

    /// Checks everything that can be checked without touching the data.
    pub fn validate(&self) -> Result<(), UsageError> {
        self.mlp_spec()?;
        if self.lrs.is_empty() {
            return Err(usage("at least one learning rate is required"));
        }
        if self.seeds == 0 {
            return Err(usage("seeds must be positive"));
        }
        if self.train_n == 0 || self.valid_n == 0 || self.test_n == 0 {
            return Err(usage("train_n, valid_n and test_n must be positive"));
        }
        match (self.dataset, self.split) {
            (DatasetKind::Mnist, SplitKind::Official) if self.train_n + self.valid_n > 60_000 => {
                return Err(usage("official split: train_n + valid_n must not exceed 60000"));
            }
            (DatasetKind::Mnist, SplitKind::Random) if self.train_n + self.valid_n + self.test_n > 70_000 => {
                return Err(usage("random split: train_n + valid_n + test_n must not exceed 70000"));
            }
            (DatasetKind::Synthetic, _) if self.train_n + self.valid_n + self.test_n > self.synthetic_n => {
                return Err(usage("train_n + valid_n + test_n must not exceed synthetic_n"));
            }
            _ => {}
        }
        for loss in self.loss_kinds()? {
            for &lr in &self.lrs {
                for seed in self.run_seeds() {
                    self.train_config(loss, lr, seed)
                        .validate()
                        .map_err(|e| usage(e.to_string()))?;
                }
            }
        }
        Ok(())
    }
}
