use ndarray::Array1;

use crate::error::{Error, Result};
use crate::loss::ProbVector;
use crate::objective::LossKind;

use super::mlp::Linear;

/// Class frequencies with every entry strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPriors(ProbVector);

impl ClassPriors {
    /// Empirical frequencies; empty classes are floored at `1/(10·N)` and the
    /// result renormalized.
    pub fn from_labels(labels: &[usize], num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::domain("cannot estimate priors from zero labels"));
        }
        let mut counts = vec![0.0; num_classes];
        for &l in labels {
            *counts.get_mut(l).ok_or_else(|| Error::domain(format!("label {l} out of range")))? += 1.0;
        }
        let n = labels.len() as f64;
        let floor = 1.0 / (10.0 * n);
        let weights = counts.into_iter().map(|c| (c / n).max(floor)).collect();
        Ok(Self(ProbVector::from_weights(weights)?))
    }

    pub fn from_probs(probs: &ProbVector, n_samples: usize) -> Result<Self> {
        let floor = 1.0 / (10.0 * n_samples.max(1) as f64);
        let weights = probs.probs().iter().map(|p| p.max(floor)).collect();
        Ok(Self(ProbVector::from_weights(weights)?))
    }

    pub fn uniform(num_classes: usize) -> Self {
        Self(ProbVector::from_weights(vec![1.0; num_classes]).expect("positive weights"))
    }

    pub fn probs(&self) -> &ProbVector {
        &self.0
    }
}

/// Output biases under which a zero-weight layer predicts `priors`.
///
/// * softmax family and the bounds: `b_k = ln p_k`
/// * spherical softmax: `b_k = √p_k`, giving `(p_k + ε)/(1 + D·ε)`
/// * Taylor softmax: `b_k = −1 + √(2β·p_k − 1)` with `β = 1/(2·min p)`, so every
///   numerator equals `β·p_k`
/// * MSE: `b_k = p_k`
pub fn prior_bias(priors: &ClassPriors, loss: &LossKind) -> Array1<f64> {
    let p = priors.probs().probs();
    match loss {
        LossKind::LogSoftmax | LossKind::LogSoftmaxAbs | LossKind::BoundFixed { .. } | LossKind::BoundOptimized => {
            p.iter().map(|v| v.ln()).collect()
        }
        LossKind::LogSpherical { .. } => p.iter().map(|v| v.sqrt()).collect(),
        LossKind::LogTaylor => {
            let min = p.iter().copied().fold(f64::INFINITY, f64::min);
            let beta = 1.0 / (2.0 * min);
            p.iter().map(|v| -1.0 + (2.0 * beta * v - 1.0).max(0.0).sqrt()).collect()
        }
        LossKind::Mse => Array1::from(p.to_vec()),
    }
}

/// Zero weights with the prior-matching bias.
pub fn output_init(num_classes: usize, input_dim: usize, priors: &ClassPriors, loss: &LossKind) -> Result<Linear> {
    if priors.probs().dim() != num_classes {
        return Err(Error::Dimension {
            what: "one prior per class",
            expected: num_classes,
            got: priors.probs().dim(),
        });
    }
    let mut layer = Linear::zeros(input_dim, num_classes);
    layer.bias = prior_bias(priors, loss);
    Ok(layer)
}
