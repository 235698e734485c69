//! Normalizing functions and the categorical losses built on them.
//!
//! Every loss here except the two log-softmax baselines belongs to the
//! spherical family: it depends on the logits `o` only through `s = Σ oᵢ`,
//! `q = Σ oᵢ²` and the target coordinate `o_c`. Those losses report their
//! partials `(∂L/∂s, ∂L/∂q, ∂L/∂o_c)` next to the dense gradient so that
//! callers (the factored output layer in particular) never need `o` itself.

use crate::error::{Error, Result};

/// Pre-activations of an output layer. Always at least two finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsVector(Vec<f64>);

impl LogitsVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::domain(format!(
                "logits need at least 2 classes, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "non-finite logit {} at index {i}",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(values.to_vec())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn target(&self, c: usize) -> Result<TargetIndex> {
        TargetIndex::new(c, self.dim())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Perturbs one coordinate in place. Only used by the finite-difference oracle,
    /// which keeps values finite.
    fn nudge(&mut self, i: usize, delta: f64) {
        self.0[i] += delta;
    }
}

/// 0-based index of the target class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TargetIndex(usize);

impl TargetIndex {
    pub fn new(c: usize, dim: usize) -> Result<Self> {
        if c >= dim {
            return Err(Error::Dimension {
                what: "target index must be below the number of classes",
                expected: dim,
                got: c,
            });
        }
        Ok(Self(c))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

/// Sufficient statistics of a spherical-family loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalStats {
    pub s: f64,
    pub q: f64,
    pub o_c: f64,
    pub y_c: f64,
}

impl SphericalStats {
    /// Checks `q ≥ 0`, `q ≥ o_c²` and `s² ≤ D·q` up to a relative slack.
    pub fn is_consistent(&self, dim: usize, rel_tol: f64) -> bool {
        let scale = self.q.abs().max(1.0);
        self.q >= -rel_tol * scale
            && self.q - self.o_c * self.o_c >= -rel_tol * scale
            && dim as f64 * self.q - self.s * self.s >= -rel_tol * scale * dim as f64
    }
}

/// A categorical distribution: nonnegative entries summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::domain("probabilities must be finite and nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self(probs))
    }

    /// Normalizes nonnegative weights into a distribution.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::domain("weights must be nonnegative with a positive sum"));
        }
        Ok(Self(weights.into_iter().map(|w| w / total).collect()))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        self.0
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| -p * p.ln())
            .sum()
    }
}

/// `(∂L/∂s, ∂L/∂q, ∂L/∂o_c)` of a spherical-family loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Partials {
    pub ds: f64,
    pub dq: f64,
    pub doc: f64,
}

impl Partials {
    pub fn is_finite(&self) -> bool {
        self.ds.is_finite() && self.dq.is_finite() && self.doc.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad_o: Vec<f64>,
    /// Present only for spherical-family losses.
    pub partials: Option<Partials>,
}

/// Coefficients of the positive quadratic `a1 + a2·x + a3·x²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticNormalizerParams {
    a1: f64,
    a2: f64,
    a3: f64,
}

impl QuadraticNormalizerParams {
    /// Requires `a3 > 0` and `4·a1·a3 − a2² > 0`.
    pub fn new(a1: f64, a2: f64, a3: f64) -> Result<Self> {
        if !(a1.is_finite() && a2.is_finite() && a3.is_finite()) {
            return Err(Error::config("quadratic coefficients must be finite"));
        }
        if !(a3 > 0.0) || !(4.0 * a1 * a3 - a2 * a2 > 0.0) {
            return Err(Error::config(format!(
                "{a1} + {a2}x + {a3}x² is not a strictly positive polynomial"
            )));
        }
        Ok(Self { a1, a2, a3 })
    }

    /// Skips the positivity check, e.g. for the semi-definite `(0, 0, 1)`.
    pub fn new_unchecked(a1: f64, a2: f64, a3: f64) -> Self {
        Self { a1, a2, a3 }
    }

    pub fn taylor() -> Self {
        Self::new_unchecked(1.0, 1.0, 0.5)
    }

    pub fn spherical(eps: Epsilon) -> Self {
        Self::new_unchecked(eps.value(), 0.0, 1.0)
    }

    pub fn coefficients(&self) -> (f64, f64, f64) {
        (self.a1, self.a2, self.a3)
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.a1 + x * (self.a2 + self.a3 * x)
    }
}

/// Additive constant of the spherical softmax. Strictly positive unless built
/// through [`Epsilon::new_unchecked`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Epsilon(f64);

impl Epsilon {
    pub const DEFAULT: f64 = 1e-2;

    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::config(format!("eps must be positive and finite, got {eps}")));
        }
        Ok(Self(eps))
    }

    /// Admits `eps = 0` (scale-invariant spherical softmax).
    pub fn new_unchecked(eps: f64) -> Self {
        Self(eps)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Epsilon {
    fn default() -> Self {
        Self(Self::DEFAULT)
    }
}

pub fn summary_stats(o: &LogitsVector, c: TargetIndex) -> SphericalStats {
    let (s, q) = o
        .values()
        .iter()
        .fold((0.0, 0.0), |(s, q), &v| (s + v, q + v * v));
    SphericalStats {
        s,
        q,
        o_c: o.values()[c.get()],
        y_c: 1.0,
    }
}

/// Max-shifted `log Σ exp(xᵢ)`.
pub fn logsumexp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

pub fn softmax(o: &LogitsVector) -> ProbVector {
    ProbVector(softmax_slice(o.values()))
}

/// Cross-entropy of the softmax. Not a spherical loss, so no partials.
pub fn log_softmax_loss(o: &LogitsVector, c: TargetIndex) -> LossGrad {
    let c = c.get();
    let loss = logsumexp(o.values()) - o.values()[c];
    let mut grad_o = softmax_slice(o.values());
    grad_o[c] -= 1.0;
    LossGrad {
        loss,
        grad_o,
        partials: None,
    }
}

/// Cross-entropy of `softmax(|o|)`. The subgradient at `oᵢ = 0` is taken as 0.
pub fn log_softmax_abs_loss(o: &LogitsVector, c: TargetIndex) -> LossGrad {
    let c = c.get();
    let abs: Vec<f64> = o.values().iter().map(|v| v.abs()).collect();
    let loss = logsumexp(&abs) - abs[c];
    let mut grad_o = softmax_slice(&abs);
    grad_o[c] -= 1.0;
    for (g, &v) in grad_o.iter_mut().zip(o.values()) {
        *g *= if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        };
    }
    LossGrad {
        loss,
        grad_o,
        partials: None,
    }
}

/// Squared error against the one-hot target, `q − 2·o_c + 1`.
pub fn mse_loss(o: &LogitsVector, c: TargetIndex) -> LossGrad {
    mse_loss_with_target(o, c, 1.0)
}

/// Squared error `‖o − y_c·e_c‖² = q − 2·o_c·y_c + y_c²` for a general target value.
pub fn mse_loss_with_target(o: &LogitsVector, c: TargetIndex, y_c: f64) -> LossGrad {
    let c = c.get();
    let mut loss = 0.0;
    let mut grad_o = Vec::with_capacity(o.dim());
    for (k, &v) in o.values().iter().enumerate() {
        let r = if k == c { v - y_c } else { v };
        loss += r * r;
        grad_o.push(2.0 * r);
    }
    LossGrad {
        loss,
        grad_o,
        partials: Some(mse_partials(y_c)),
    }
}

pub fn mse_from_stats(stats: &SphericalStats) -> (f64, Partials) {
    let loss = stats.q - 2.0 * stats.o_c * stats.y_c + stats.y_c * stats.y_c;
    (loss, mse_partials(stats.y_c))
}

fn mse_partials(y_c: f64) -> Partials {
    Partials {
        ds: 0.0,
        dq: 1.0,
        doc: -2.0 * y_c,
    }
}

/// `(a1 + a2·oₖ + a3·oₖ²) / (a1·D + a2·s + a3·q)`.
pub fn quadratic_normalizer(
    o: &LogitsVector,
    params: &QuadraticNormalizerParams,
) -> Result<ProbVector> {
    let numerators: Vec<f64> = o.values().iter().map(|&v| params.eval(v)).collect();
    let total: f64 = numerators.iter().sum();
    if !(total > 0.0) {
        return Err(Error::domain(format!(
            "normalizer denominator is {total}; polynomial is not positive on these logits"
        )));
    }
    if numerators.iter().any(|n| *n < 0.0) {
        return Err(Error::domain("negative normalizer numerator"));
    }
    Ok(ProbVector(numerators.into_iter().map(|n| n / total).collect()))
}

/// `(oₖ² + ε) / Σ (oᵢ² + ε)`. Fails only for `ε = 0` on the zero vector.
pub fn spherical_softmax(o: &LogitsVector, eps: Epsilon) -> Result<ProbVector> {
    quadratic_normalizer(o, &QuadraticNormalizerParams::spherical(eps))
}

/// `(1 + oₖ + oₖ²/2) / Σ (1 + oᵢ + oᵢ²/2)`. Numerators are at least 0.5.
pub fn taylor_softmax(o: &LogitsVector) -> ProbVector {
    quadratic_normalizer(o, &QuadraticNormalizerParams::taylor())
        .expect("taylor numerators are bounded below by 0.5")
}

#[inline]
pub fn taylor_numerator(x: f64) -> f64 {
    1.0 + x + 0.5 * x * x
}

/// Negative log of the spherical softmax at the target class.
pub fn log_spherical_softmax_loss(o: &LogitsVector, c: TargetIndex, eps: Epsilon) -> LossGrad {
    let eps = eps.value();
    let c = c.get();
    let denom: f64 = o.values().iter().map(|v| v * v + eps).sum();
    let o_c = o.values()[c];
    let num_c = o_c * o_c + eps;
    let loss = denom.ln() - num_c.ln();
    let mut grad_o: Vec<f64> = o.values().iter().map(|v| 2.0 * v / denom).collect();
    grad_o[c] -= 2.0 * o_c / num_c;
    let stats = summary_stats(o, TargetIndex(c));
    let (_, partials) = log_spherical_from_stats(&stats, o.dim(), Epsilon(eps));
    LossGrad {
        loss,
        grad_o,
        partials: Some(partials),
    }
}

pub fn log_spherical_from_stats(stats: &SphericalStats, dim: usize, eps: Epsilon) -> (f64, Partials) {
    let eps = eps.value();
    let denom = stats.q + dim as f64 * eps;
    let num_c = stats.o_c * stats.o_c + eps;
    let partials = Partials {
        ds: 0.0,
        dq: 1.0 / denom,
        doc: -2.0 * stats.o_c / num_c,
    };
    (denom.ln() - num_c.ln(), partials)
}

/// Negative log of the Taylor softmax at the target class.
pub fn log_taylor_softmax_loss(o: &LogitsVector, c: TargetIndex) -> LossGrad {
    let c = c.get();
    let denom: f64 = o.values().iter().map(|&v| taylor_numerator(v)).sum();
    let o_c = o.values()[c];
    let num_c = taylor_numerator(o_c);
    let loss = denom.ln() - num_c.ln();
    let mut grad_o: Vec<f64> = o.values().iter().map(|v| (1.0 + v) / denom).collect();
    grad_o[c] -= (1.0 + o_c) / num_c;
    let stats = summary_stats(o, TargetIndex(c));
    let (_, partials) = log_taylor_from_stats(&stats, o.dim());
    LossGrad {
        loss,
        grad_o,
        partials: Some(partials),
    }
}

pub fn log_taylor_from_stats(stats: &SphericalStats, dim: usize) -> (f64, Partials) {
    let z = dim as f64 + stats.s + 0.5 * stats.q;
    let num_c = taylor_numerator(stats.o_c);
    let partials = Partials {
        ds: 1.0 / z,
        dq: 0.5 / z,
        doc: -(1.0 + stats.o_c) / num_c,
    };
    (z.ln() - num_c.ln(), partials)
}

/// Chain rule through `s` and `q`: `(∂L/∂s)·1 + 2(∂L/∂q)·o + (∂L/∂o_c)·e_c`.
pub fn grad_from_partials(partials: &Partials, o: &LogitsVector, c: TargetIndex) -> Vec<f64> {
    let mut grad: Vec<f64> = o
        .values()
        .iter()
        .map(|v| partials.ds + 2.0 * partials.dq * v)
        .collect();
    grad[c.get()] += partials.doc;
    grad
}

/// Default central-difference step for 64-bit floats.
pub const FD_STEP: f64 = 1e-5;

/// Central-difference gradient of `loss_fn` with respect to the logits.
pub fn finite_diff_grad<F>(mut loss_fn: F, o: &LogitsVector, c: TargetIndex, step: f64) -> Vec<f64>
where
    F: FnMut(&LogitsVector, TargetIndex) -> f64,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut probe = o.clone();
    (0..o.dim())
        .map(|i| {
            probe.nudge(i, step);
            let up = loss_fn(&probe, c);
            probe.0[i] = o.0[i] - step;
            let down = loss_fn(&probe, c);
            probe.0[i] = o.0[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
