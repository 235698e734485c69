use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::loss::{Partials, SphericalStats};

use super::StepPartials;

/// Plain `o = W·h + b` layer. The O(D·d) reference the factored layer is checked against.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOutputLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseOutputLayer {
    pub fn zeros(num_classes: usize, input_dim: usize) -> Self {
        Self {
            weights: Array2::zeros((num_classes, input_dim)),
            bias: Array1::zeros(num_classes),
        }
    }

    pub fn new(weights: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::Dimension {
                what: "bias length must match the number of classes",
                expected: weights.nrows(),
                got: bias.len(),
            });
        }
        Ok(Self { weights, bias })
    }

    pub fn num_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    fn check_input(&self, h: &[f64]) -> Result<()> {
        if h.len() != self.input_dim() {
            return Err(Error::Dimension {
                what: "input length must match the layer input dimension",
                expected: self.input_dim(),
                got: h.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, h: &[f64]) -> Result<Array1<f64>> {
        self.check_input(h)?;
        Ok(self.weights.dot(&ArrayView1::from(h)) + &self.bias)
    }

    pub fn forward_stats(&self, h: &[f64], c: usize) -> Result<SphericalStats> {
        let o = self.forward(h)?;
        Ok(SphericalStats {
            s: o.sum(),
            q: o.dot(&o),
            o_c: o[c],
            y_c: 1.0,
        })
    }

    /// Gradient with respect to `o` implied by spherical partials at the current weights.
    pub fn grad_o_from_partials(&self, h: &[f64], c: usize, p: &Partials) -> Result<Array1<f64>> {
        let o = self.forward(h)?;
        let mut g = o.mapv(|v| p.ds + 2.0 * p.dq * v);
        g[c] += p.doc;
        Ok(g)
    }

    /// `W ← W − lr·g·hᵀ`, `b ← b − lr·g`.
    pub fn sgd_step_dense(&mut self, h: &[f64], grad_o: ArrayView1<f64>, lr: f64) -> Result<()> {
        self.check_input(h)?;
        let h = ArrayView1::from(h);
        for (mut row, &g) in self.weights.rows_mut().into_iter().zip(grad_o.iter()) {
            row.scaled_add(-lr * g, &h);
        }
        self.bias.scaled_add(-lr, &grad_o);
        Ok(())
    }

    /// Simultaneous update with the dense gradient rebuilt from the partials.
    pub fn sgd_step(&mut self, p: &StepPartials<'_>, lr: f64) -> Result<()> {
        let g = self.grad_o_from_partials(p.input, p.class, &p.partials)?;
        self.sgd_step_dense(p.input, g.view(), lr)
    }

    /// `Wᵀ·g`, the gradient flowing back into the layer input.
    pub fn input_grad(&self, grad_o: ArrayView1<f64>) -> Array1<f64> {
        self.weights.t().dot(&grad_o)
    }

    /// Relative Frobenius distance of `[W | b]` to another layer.
    pub fn rel_frobenius_diff(&self, other: &DenseOutputLayer) -> f64 {
        let diff = (&self.weights - &other.weights).mapv(|v| v * v).sum()
            + (&self.bias - &other.bias).mapv(|v| v * v).sum();
        let scale = self.weights.mapv(|v| v * v).sum() + self.bias.mapv(|v| v * v).sum();
        if scale == 0.0 {
            diff.sqrt()
        } else {
            (diff / scale).sqrt()
        }
    }
}
