//! Minibatch training of rectifier MLPs with Nesterov momentum, learning-rate
//! halving on validation plateaus and early stopping.

mod init;
mod mlp;
mod optim;

use std::fmt::Write as _;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use init::{output_init, prior_bias, ClassPriors};
pub use mlp::{
    batch_loss_grad, he_init, he_std, loss_and_grads, ForwardCache, Grads, Linear, Mlp, MlpSpec, OutputLayer,
};
pub use optim::nesterov_step;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fast_output::{DenseOutputLayer, FactoredOutputLayer, StepPartials};
use crate::loss::{LogitsVector, TargetIndex};
use crate::objective::LossKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputKind {
    Dense,
    /// [`FactoredOutputLayer`]; spherical losses only, trained without momentum.
    Factored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasInit {
    Zero,
    /// Match the training-set class frequencies, see [`output_init`].
    Prior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub initial_lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Epochs without a validation-error improvement before the rate is cut.
    pub patience: usize,
    pub lr_decay_factor: f64,
    pub max_epochs: usize,
    /// Training ends once the rate has been cut this many times.
    pub max_halvings: usize,
    pub seed: u64,
    pub output_layer: OutputKind,
    pub bias_init: BiasInit,
}

impl TrainConfig {
    pub fn new(loss: LossKind, initial_lr: f64) -> Self {
        Self {
            loss,
            initial_lr,
            momentum: 0.9,
            batch_size: 200,
            patience: 5,
            lr_decay_factor: 0.5,
            max_epochs: 50,
            max_halvings: 10,
            seed: 0,
            output_layer: OutputKind::Dense,
            bias_init: BiasInit::Zero,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::config(msg.to_string()));
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad("initial_lr must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return bad("batch_size, patience and max_epochs must be positive");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return bad("lr_decay_factor must lie in (0, 1)");
        }
        if self.bias_init == BiasInit::Zero && self.loss.is_even() {
            return Err(Error::config(format!(
                "{} is even in the logits, so zero output weights with a zero bias are a \
                 stationary point; use the prior bias init",
                self.loss.name()
            )));
        }
        if self.output_layer == OutputKind::Factored && !self.loss.is_spherical() {
            return Err(Error::config(format!(
                "the factored output layer needs a spherical loss, not {}",
                self.loss.name()
            )));
        }
        Ok(())
    }
}

pub const EPOCH_CSV_HEADER: &str = "epoch,lr,train_loss,valid_loss,valid_error";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean minibatch loss over the epoch, measured before each update.
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid_error: f64,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.lr, self.train_loss, self.valid_loss, self.valid_error
        )
    }
}

/// Per-example averages over a split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// The training loss.
    pub loss: f64,
    pub negll: f64,
    pub error: f64,
    pub top10_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub epochs: Vec<EpochRecord>,
    pub test_loss: f64,
    pub test_error: f64,
    pub test_negll: f64,
    pub top10_error: f64,
    pub epochs_run: usize,
    /// Epoch whose parameters produced the test metrics (0 = initialization).
    pub best_epoch: usize,
}

impl RunMetrics {
    pub fn epoch_csv(&self) -> String {
        let mut out = String::from(EPOCH_CSV_HEADER);
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&e.csv_row());
            out.push('\n');
        }
        out
    }

    /// `key=value` lines.
    pub fn to_flat_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "test_loss={}", self.test_loss);
        let _ = writeln!(out, "test_negll={}", self.test_negll);
        let _ = writeln!(out, "test_error={}", self.test_error);
        let _ = writeln!(out, "top10_error={}", self.top10_error);
        let _ = writeln!(out, "epochs_run={}", self.epochs_run);
        let _ = writeln!(out, "best_epoch={}", self.best_epoch);
        out
    }
}

pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub model: Mlp,
    pub metrics: RunMetrics,
}

/// Rank of the target among the scores: classes scoring higher, plus equal
/// scores at lower indices.
fn target_rank(scores: &[f64], c: usize) -> usize {
    let t = scores[c];
    scores
        .iter()
        .enumerate()
        .filter(|&(k, &v)| v > t || (v == t && k < c))
        .count()
}

const EVAL_CHUNK: usize = 1000;

/// Loss, negll, error and top-10 error of `model` on `data`.
pub fn evaluate(model: &Mlp, data: &Dataset, loss: &LossKind) -> Result<Evaluation> {
    let out = model.output.to_linear();
    let dim = out.bias.len();
    let (mut total_loss, mut total_negll, mut errors, mut top10) = (0.0, 0.0, 0usize, 0usize);
    let n = data.len();
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let cache = model.forward_hidden(data.features().slice(s![start..end, ..]));
        let logits = out.forward(cache.last_hidden().view());
        for (row, &c) in logits.rows().into_iter().zip(&data.labels()[start..end]) {
            let o = LogitsVector::new(row.to_vec())?;
            let t = TargetIndex::new(c, dim)?;
            total_loss += loss.eval(&o, t).loss;
            total_negll += loss.negll(&o, t);
            let rank = target_rank(&loss.scores(o.values()), c);
            errors += (rank >= 1) as usize;
            top10 += (rank >= 10) as usize;
        }
        start = end;
    }
    let n = n as f64;
    Ok(Evaluation {
        loss: total_loss / n,
        negll: total_negll / n,
        error: errors as f64 / n,
        top10_error: top10 as f64 / n,
    })
}

/// The untrained model of `config`: He-initialized hidden layers and a zero
/// output layer with the configured bias.
pub fn init_model(spec: &MlpSpec, config: &TrainConfig, train: &Dataset, rng: &mut ChaCha8Rng) -> Result<Mlp> {
    let d = spec.last_hidden();
    let out = match config.bias_init {
        BiasInit::Zero => Linear::zeros(d, spec.output_dim),
        BiasInit::Prior => {
            let priors = ClassPriors::from_labels(train.labels(), spec.output_dim)?;
            output_init(spec.output_dim, d, &priors, &config.loss)?
        }
    };
    let output = match config.output_layer {
        OutputKind::Dense => OutputLayer::Dense(out),
        OutputKind::Factored => {
            let dense = DenseOutputLayer::new(out.weights, out.bias)?;
            OutputLayer::Factored(FactoredOutputLayer::from_dense(&dense, true)?)
        }
    };
    Ok(Mlp::new(spec, output, rng))
}

fn check_shapes(spec: &MlpSpec, data: &Dataset) -> Result<()> {
    if data.input_dim() != spec.input_dim {
        return Err(Error::Dimension {
            what: "dataset features vs model input",
            expected: spec.input_dim,
            got: data.input_dim(),
        });
    }
    if data.num_classes() > spec.output_dim {
        return Err(Error::Dimension {
            what: "dataset classes vs model outputs",
            expected: spec.output_dim,
            got: data.num_classes(),
        });
    }
    Ok(())
}

fn momentum_step(params: &mut Linear, velocity: &mut Linear, grad: &Linear, lr: f64, mu: f64) {
    nesterov_step(
        params.weights.as_slice_mut().expect("standard layout"),
        velocity.weights.as_slice_mut().expect("standard layout"),
        grad.weights.as_slice().expect("standard layout"),
        lr,
        mu,
    );
    nesterov_step(
        params.bias.as_slice_mut().expect("contiguous"),
        velocity.bias.as_slice_mut().expect("contiguous"),
        grad.bias.as_slice().expect("contiguous"),
        lr,
        mu,
    );
}

/// One minibatch update; returns the mean loss before the update.
fn train_batch(
    model: &mut Mlp,
    velocity: &mut [Linear],
    x: ArrayView2<f64>,
    labels: &[usize],
    config: &TrainConfig,
    lr: f64,
) -> Result<f64> {
    let mu = config.momentum;
    let n_hidden = model.hidden.len();
    match &mut model.output {
        OutputLayer::Dense(_) => {
            let (value, grads) = loss_and_grads(model, x, labels, &config.loss)?;
            if !value.is_finite() {
                return Ok(value);
            }
            for (l, g) in grads.hidden.iter().enumerate() {
                momentum_step(&mut model.hidden[l], &mut velocity[l], g, lr, mu);
            }
            let OutputLayer::Dense(out) = &mut model.output else { unreachable!() };
            let g = grads.output.as_ref().expect("dense backward returns output grads");
            momentum_step(out, &mut velocity[n_hidden], g, lr, mu);
            Ok(value)
        }
        OutputLayer::Factored(_) => {
            let cache = model.forward_hidden(x);
            let OutputLayer::Factored(layer) = &mut model.output else { unreachable!() };
            let h = cache.last_hidden();
            let (batch, d) = h.dim();
            let scale = 1.0 / batch as f64;
            let dim = layer.num_classes();
            let mut partials = Vec::with_capacity(batch);
            let mut d_hidden = Array2::zeros((batch, d));
            let mut total = 0.0;
            for (i, (row, &c)) in h.rows().into_iter().zip(labels).enumerate() {
                let hi = row.as_slice().expect("standard layout");
                let stats = layer.forward_stats(hi, c)?;
                let (value, p) = config
                    .loss
                    .eval_stats(&stats, dim)
                    .ok_or_else(|| Error::config("factored output layer needs a spherical loss"))?;
                total += value;
                let g = layer.input_grad(hi, c, &p)?;
                d_hidden.row_mut(i).assign(&(g * scale));
                partials.push(p);
            }
            let value = total * scale;
            if !value.is_finite() {
                return Ok(value);
            }
            // Every example's partials come from the pre-step weights, so the
            // sequence of rank-structured steps sums to the minibatch gradient step.
            for ((row, &c), p) in h.rows().into_iter().zip(labels).zip(&partials) {
                let step = StepPartials {
                    partials: *p,
                    class: c,
                    input: row.as_slice().expect("standard layout"),
                };
                layer.sgd_step(&step, lr * scale)?;
            }
            if n_hidden > 0 {
                let grads = model.backward_hidden(&cache, d_hidden);
                for (l, g) in grads.iter().enumerate() {
                    momentum_step(&mut model.hidden[l], &mut velocity[l], g, lr, mu);
                }
            }
            Ok(value)
        }
    }
}

/// Runs the full protocol and reports test metrics of the best validation epoch.
/// `observer` sees every epoch record as it is produced.
pub fn train(
    spec: &MlpSpec,
    config: &TrainConfig,
    train_set: &Dataset,
    valid_set: &Dataset,
    test_set: &Dataset,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    for data in [train_set, valid_set, test_set] {
        check_shapes(spec, data)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = init_model(spec, config, train_set, &mut rng)?;
    let mut velocity: Vec<Linear> = model
        .hidden
        .iter()
        .map(|l| Linear::zeros(l.weights.ncols(), l.weights.nrows()))
        .collect();
    if let OutputLayer::Dense(out) = &model.output {
        velocity.push(Linear::zeros(out.weights.ncols(), out.weights.nrows()));
    }

    let mut best = model.clone();
    let mut best_error = evaluate(&model, valid_set, &config.loss)?.error;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut halvings = 0;
    let mut lr = config.initial_lr;
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let x = train_set.features().select(Axis(0), chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.labels()[i]).collect();
            // Validated data only yields domain errors once the weights overflow.
            let value = match train_batch(&mut model, &mut velocity, x.view(), &labels, config, lr) {
                Err(Error::Domain(_)) => f64::NAN,
                other => other?,
            };
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    loss: value,
                    lr,
                });
            }
            loss_sum += value * chunk.len() as f64;
        }
        let diverged = |loss| Error::Diverged {
            epoch,
            batch: order.len().div_ceil(config.batch_size),
            loss,
            lr,
        };
        let valid = match evaluate(&model, valid_set, &config.loss) {
            Err(Error::Domain(_)) => return Err(diverged(f64::NAN)),
            other => other?,
        };
        if !valid.loss.is_finite() {
            return Err(diverged(valid.loss));
        }
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / train_set.len() as f64,
            valid_loss: valid.loss,
            valid_error: valid.error,
        };
        observer(&record);
        epochs.push(record);

        if valid.error < best_error {
            best_error = valid.error;
            best = model.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                stale = 0;
                halvings += 1;
                lr *= config.lr_decay_factor;
                if halvings >= config.max_halvings {
                    break;
                }
            }
        }
    }

    let test = evaluate(&best, test_set, &config.loss)?;
    let metrics = RunMetrics {
        epochs_run: epochs.len(),
        epochs,
        test_loss: test.loss,
        test_error: test.error,
        test_negll: test.negll,
        top10_error: test.top10_error,
        best_epoch,
    };
    Ok(TrainOutcome { model: best, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_categorical, zipf_probs, SyntheticSpec};
    use crate::loss::Epsilon;

    fn separable(n: usize, seed: u64) -> Dataset {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::zeros((n, 2));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % 2;
            let sign = if c == 0 { -1.0 } else { 1.0 };
            x[[i, 0]] = sign * rng.random_range(0.5..1.5);
            x[[i, 1]] = rng.random_range(-1.0..1.0);
            y.push(c);
        }
        Dataset::new(x, y, 2, "separable").unwrap()
    }

    fn all_losses() -> Vec<LossKind> {
        LossKind::NAMES
            .iter()
            .map(|n| LossKind::parse(n, Epsilon::new(0.01).unwrap(), 1.0).unwrap())
            .collect()
    }

    #[test]
    fn separable_toy_set_is_learned_by_every_loss() {
        let data = separable(200, 1);
        let spec = MlpSpec::new(2, vec![8], 2).unwrap();
        for loss in all_losses() {
            let mut config = TrainConfig::new(loss, 0.05);
            config.batch_size = 10;
            config.max_epochs = 20;
            config.seed = 3;
            if loss.is_even() {
                config.bias_init = BiasInit::Prior;
            }
            let run = train(&spec, &config, &data, &data, &data, &mut |_| {}).unwrap();
            let train_err = evaluate(&run.model, &data, &loss).unwrap().error;
            assert_eq!(train_err, 0.0, "{loss}");
        }
    }

    #[test]
    fn seeded_runs_are_identical() {
        let data = separable(100, 2);
        let spec = MlpSpec::new(2, vec![5], 2).unwrap();
        let mut config = TrainConfig::new(LossKind::LogTaylor, 0.05);
        config.batch_size = 20;
        config.max_epochs = 5;
        config.seed = 9;
        let a = train(&spec, &config, &data, &data, &data, &mut |_| {}).unwrap();
        let b = train(&spec, &config, &data, &data, &data, &mut |_| {}).unwrap();
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn lr_schedule_and_early_stopping() {
        // Labels independent of the features: the validation error plateaus
        // quickly and the rate gets cut repeatedly.
        let make = |seed| {
            synthetic_categorical(&SyntheticSpec {
                num_classes: 4,
                input_dim: 3,
                n: 300,
                zipf_exponent: 0.0,
                separation: 0.0,
                seed,
            })
            .unwrap()
        };
        let (tr, va, te) = (make(1), make(2), make(3));
        let spec = MlpSpec::new(3, vec![6], 4).unwrap();
        let mut config = TrainConfig::new(LossKind::LogSoftmax, 0.1);
        config.batch_size = 50;
        config.patience = 2;
        config.max_epochs = 200;
        config.max_halvings = 4;
        let run = train(&spec, &config, &tr, &va, &te, &mut |_| {}).unwrap();
        let m = &run.metrics;
        assert!(m.epochs_run < 200);
        for w in m.epochs.windows(2) {
            let ratio = w[1].lr / w[0].lr;
            assert!(ratio == 1.0 || ratio == 0.5, "{ratio}");
        }
        let last = m.epochs.last().unwrap();
        assert_eq!(last.lr, 0.1 / 8.0);

        let re = evaluate(&run.model, &te, &config.loss).unwrap();
        assert_eq!(re.error, m.test_error);
        assert_eq!(re.negll, m.test_negll);
        let best_valid = m
            .epochs
            .iter()
            .map(|e| e.valid_error)
            .fold(f64::INFINITY, f64::min);
        if m.best_epoch > 0 {
            assert_eq!(m.epochs[m.best_epoch - 1].valid_error, best_valid);
            assert_eq!(evaluate(&run.model, &va, &config.loss).unwrap().error, best_valid);
        }
    }

    #[test]
    fn divergent_learning_rate_is_reported() {
        let data = separable(100, 4);
        let spec = MlpSpec::new(2, vec![16, 16], 2).unwrap();
        let mut config = TrainConfig::new(LossKind::Mse, 1e6);
        config.batch_size = 10;
        let err = train(&spec, &config, &data, &data, &data, &mut |_| {}).err().unwrap();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    /// Largest per-step relative gap between the minibatch losses of a dense
    /// and a factored output layer trained side by side with plain SGD.
    fn dense_factored_gap(loss: LossKind, lr: f64, steps: usize) -> f64 {
        let data = synthetic_categorical(&SyntheticSpec {
            num_classes: 30,
            input_dim: 5,
            n: 400,
            zipf_exponent: 1.0,
            separation: 1.0,
            seed: 5,
        })
        .unwrap();
        let spec = MlpSpec::new(5, vec![7], 30).unwrap();
        let mut config = TrainConfig::new(loss, lr);
        config.momentum = 0.0;
        config.batch_size = 20;
        config.bias_init = BiasInit::Prior;
        let mut dense = init_model(&spec, &config, &data, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        config.output_layer = OutputKind::Factored;
        let mut fact = init_model(&spec, &config, &data, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut v_dense = vec![Linear::zeros(5, 7), Linear::zeros(7, 30)];
        let mut v_fact = vec![Linear::zeros(5, 7)];
        let order: Vec<usize> = (0..data.len()).collect();
        let mut worst = 0.0f64;
        for step in 0..steps {
            let chunk = order.chunks(20).nth(step % 20).unwrap();
            let x = data.features().select(Axis(0), chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels()[i]).collect();
            let a = train_batch(&mut dense, &mut v_dense, x.view(), &labels, &config, lr).unwrap();
            let b = train_batch(&mut fact, &mut v_fact, x.view(), &labels, &config, lr).unwrap();
            worst = worst.max((a - b).abs() / a.abs());
        }
        worst
    }

    #[test]
    fn factored_training_tracks_dense_plain_sgd() {
        // The factored layer applies the examples of a batch one after the
        // other, each seeing the previous ones' updates, so it departs from the
        // dense minibatch step at second order in the rate.
        for loss in [LossKind::LogTaylor, LossKind::Mse, LossKind::BoundOptimized] {
            let gap = dense_factored_gap(loss, 0.01, 500);
            assert!(gap < 1e-2, "{loss}: {gap}");
            let first = dense_factored_gap(loss, 0.002, 2);
            let half = dense_factored_gap(loss, 0.001, 2);
            let order = (first / half).log2();
            assert!((1.7..2.3).contains(&order), "{loss}: gap ratio 2^{order}");
        }
    }

    #[test]
    fn even_losses_need_a_nonzero_start() {
        let config = TrainConfig::new(LossKind::LogSoftmaxAbs, 0.1);
        assert!(config.validate().is_err());
        let mut config = TrainConfig::new(LossKind::LogSpherical { eps: Epsilon::default() }, 0.1);
        config.bias_init = BiasInit::Prior;
        assert!(config.validate().is_ok());
    }

    #[test]
    fn factored_rejects_non_spherical_losses() {
        let mut config = TrainConfig::new(LossKind::LogSoftmax, 0.1);
        config.output_layer = OutputKind::Factored;
        assert!(config.validate().is_err());
    }

    #[test]
    fn prior_initialized_model_scores_the_entropy() {
        let probs = zipf_probs(10, 1.0);
        let spec = MlpSpec::new(3, vec![4], 10).unwrap();
        // A stream whose label frequencies equal the priors exactly.
        let counts: Vec<usize> = probs.probs().iter().map(|p| (p * 1e4).round() as usize).collect();
        let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(k, &n)| std::iter::repeat_n(k, n)).collect();
        let x = Array2::zeros((labels.len(), 3));
        let data = Dataset::new(x, labels, 10, "stream").unwrap();
        let freqs = ClassPriors::from_labels(data.labels(), 10).unwrap();
        let entropy = freqs.probs().entropy();
        for loss in [LossKind::LogSoftmax, LossKind::LogTaylor] {
            let mut config = TrainConfig::new(loss, 0.1);
            config.bias_init = BiasInit::Prior;
            let model = init_model(&spec, &config, &data, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            let ev = evaluate(&model, &data, &loss).unwrap();
            assert!((ev.negll - entropy).abs() < 1e-9, "{loss}: {} vs {entropy}", ev.negll);
        }
    }

    #[test]
    fn uniform_model_has_no_top10_error_with_ten_classes() {
        let spec = MlpSpec::new(2, vec![], 10).unwrap();
        let data = Dataset::new(Array2::ones((10, 2)), (0..10).collect(), 10, "t").unwrap();
        let config = TrainConfig::new(LossKind::LogSoftmax, 0.1);
        let model = init_model(&spec, &config, &data, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let ev = evaluate(&model, &data, &config.loss).unwrap();
        assert_eq!(ev.top10_error, 0.0);
        assert!((ev.negll - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictor() {
        let mut out = Linear::zeros(2, 2);
        out.weights[[0, 0]] = 100.0;
        out.weights[[1, 1]] = 100.0;
        let model = Mlp {
            hidden: vec![],
            output: OutputLayer::Dense(out),
        };
        let x = Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let data = Dataset::new(x, vec![0, 1], 2, "t").unwrap();
        let ev = evaluate(&model, &data, &LossKind::LogSoftmax).unwrap();
        assert_eq!(ev.error, 0.0);
        assert!(ev.negll < 1e-40);
    }
}
