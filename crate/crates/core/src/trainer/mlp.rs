use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::fast_output::FactoredOutputLayer;
use crate::loss::{LogitsVector, TargetIndex};
use crate::objective::LossKind;

/// Layer sizes of a rectifier MLP. No hidden layers gives a linear model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Result<Self> {
        if input_dim == 0 || output_dim < 2 || hidden_dims.contains(&0) {
            return Err(Error::config(format!(
                "invalid MLP shape {input_dim}-{hidden_dims:?}-{output_dim}"
            )));
        }
        Ok(Self {
            input_dim,
            hidden_dims,
            output_dim,
        })
    }

    /// Width of the last hidden layer (the output layer's input).
    pub fn last_hidden(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(self.input_dim)
    }
}

/// `y = x·Wᵀ + b` for a batch of row vectors; `weights` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Array2::zeros((fan_out, fan_in)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weights.t()) + &self.bias
    }
}

/// Standard deviation `√(2 / fan_in)` of the rectifier initialization.
pub fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

/// `fan_out × fan_in` Gaussian weights with standard deviation `√(2 / fan_in)`.
pub fn he_init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Array2<f64> {
    assert!(fan_in >= 1, "fan_in must be positive");
    let normal = Normal::new(0.0, he_std(fan_in)).expect("positive std");
    Array2::from_shape_simple_fn((fan_out, fan_in), || normal.sample(rng))
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum OutputLayer {
    Dense(Linear),
    Factored(FactoredOutputLayer),
}

impl OutputLayer {
    /// Explicit `D × d` weights and bias.
    pub fn to_linear(&self) -> Linear {
        match self {
            OutputLayer::Dense(l) => l.clone(),
            OutputLayer::Factored(f) => {
                let dense = f.materialize();
                Linear {
                    weights: dense.weights,
                    bias: dense.bias,
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub hidden: Vec<Linear>,
    pub output: OutputLayer,
}

/// Per-layer activations of one forward pass; `activations[0]` is the input.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn last_hidden(&self) -> &Array2<f64> {
        self.activations.last().expect("input is always present")
    }
}

/// Parameter gradients in the layout of [`Mlp`]. `output` is absent for a
/// factored output layer, which is updated in place from per-example partials.
#[derive(Debug, Clone)]
pub struct Grads {
    pub hidden: Vec<Linear>,
    pub output: Option<Linear>,
}

fn relu_inplace(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

impl Mlp {
    /// He-initialized hidden layers plus the given output layer.
    pub fn new<R: Rng + ?Sized>(spec: &MlpSpec, output: OutputLayer, rng: &mut R) -> Self {
        let mut fan_in = spec.input_dim;
        let mut hidden = Vec::with_capacity(spec.hidden_dims.len());
        for &width in &spec.hidden_dims {
            hidden.push(Linear {
                weights: he_init(fan_in, width, rng),
                bias: Array1::zeros(width),
            });
            fan_in = width;
        }
        Self { hidden, output }
    }

    /// Runs the hidden stack (rectifiers after every hidden layer).
    pub fn forward_hidden(&self, x: ArrayView2<f64>) -> ForwardCache {
        let mut activations = Vec::with_capacity(self.hidden.len() + 1);
        activations.push(x.to_owned());
        for layer in &self.hidden {
            let mut z = layer.forward(activations.last().expect("non-empty").view());
            relu_inplace(&mut z);
            activations.push(z);
        }
        ForwardCache { activations }
    }

    /// Logits for a batch. Materializes a factored output layer, so O(D·d²) extra.
    pub fn logits(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let cache = self.forward_hidden(x);
        match &self.output {
            OutputLayer::Dense(l) => l.forward(cache.last_hidden().view()),
            OutputLayer::Factored(_) => self.output.to_linear().forward(cache.last_hidden().view()),
        }
    }

    /// Backpropagates `d_hidden = ∂L/∂(last hidden activation)` through the hidden stack.
    pub fn backward_hidden(&self, cache: &ForwardCache, mut d_hidden: Array2<f64>) -> Vec<Linear> {
        let mut grads = Vec::with_capacity(self.hidden.len());
        for (l, layer) in self.hidden.iter().enumerate().rev() {
            Zip::from(&mut d_hidden)
                .and(&cache.activations[l + 1])
                .for_each(|g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
            let weights = d_hidden.t().dot(&cache.activations[l]);
            let bias = d_hidden.sum_axis(Axis(0));
            if l > 0 {
                d_hidden = d_hidden.dot(&layer.weights);
            }
            grads.push(Linear { weights, bias });
        }
        grads.reverse();
        grads
    }

    /// Output-layer and hidden gradients for a dense output given `∂L/∂o` (already
    /// averaged over the batch).
    pub fn backward(&self, cache: &ForwardCache, d_logits: &Array2<f64>) -> Result<Grads> {
        let OutputLayer::Dense(out) = &self.output else {
            return Err(Error::config("dense backward called on a factored output layer"));
        };
        let h = cache.last_hidden();
        let output = Linear {
            weights: d_logits.t().dot(h),
            bias: d_logits.sum_axis(Axis(0)),
        };
        let hidden = if self.hidden.is_empty() {
            Vec::new()
        } else {
            self.backward_hidden(cache, d_logits.dot(&out.weights))
        };
        Ok(Grads {
            hidden,
            output: Some(output),
        })
    }
}

/// Mean loss and `∂(mean loss)/∂o` for a batch of logits.
pub fn batch_loss_grad(logits: &Array2<f64>, labels: &[usize], loss: &LossKind) -> Result<(f64, Array2<f64>)> {
    let (batch, dim) = logits.dim();
    let scale = 1.0 / batch as f64;
    let mut grad = Array2::zeros((batch, dim));
    let mut total = 0.0;
    for (i, (row, &c)) in logits.rows().into_iter().zip(labels).enumerate() {
        let o = LogitsVector::new(row.to_vec())?;
        let lg = loss.eval(&o, TargetIndex::new(c, dim)?);
        total += lg.loss;
        for (g, v) in grad.row_mut(i).iter_mut().zip(lg.grad_o) {
            *g = v * scale;
        }
    }
    Ok((total * scale, grad))
}

/// Mean loss and parameter gradients of a dense-output model on one batch.
pub fn loss_and_grads(model: &Mlp, x: ArrayView2<f64>, labels: &[usize], loss: &LossKind) -> Result<(f64, Grads)> {
    let cache = model.forward_hidden(x);
    let OutputLayer::Dense(out) = &model.output else {
        return Err(Error::config("loss_and_grads needs a dense output layer"));
    };
    let logits = out.forward(cache.last_hidden().view());
    let (value, d_logits) = batch_loss_grad(&logits, labels, loss)?;
    Ok((value, model.backward(&cache, &d_logits)?))
}
