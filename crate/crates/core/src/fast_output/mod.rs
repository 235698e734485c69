//! Output layer with exact O(d²) updates for spherical-family losses.
//!
//! For a spherical loss the gradient over `o = W·h` is
//! `(∂L/∂s)·1 + 2(∂L/∂q)·o + (∂L/∂o_c)·e_c`, so one SGD step is
//!
//! ```text
//! W ← W·(I − β·h·hᵀ) + 1·xᵀ + e_c·yᵀ,   β = 2·lr·∂L/∂q,  x = −lr·∂L/∂s·h,  y = −lr·∂L/∂o_c·h
//! ```
//!
//! [`FactoredOutputLayer`] stores `W = (Ŵ + R)·A + 1·uᵀ` where `Ŵ` is a fixed
//! D×d core, `A` a d×d mixer, `u` a shared row offset and `R` a sparse set of
//! per-class row corrections. The right factor absorbs the `(I − β·h·hᵀ)`
//! product, `u` the all-ones term and `R` the target-row term, while the Gram
//! matrix `WᵀW` and the column sums `Wᵀ1` are kept current by rank-2 recurrences.
//! Nothing in a step touches more than a constant number of d-vectors and d×d
//! matrices, whatever the number of classes.

mod bench;
mod dense;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView1, Axis};

pub use bench::{bench, bench_csv, BenchRow, BENCH_CSV_HEADER};
pub use dense::DenseOutputLayer;

use crate::error::{Error, Result};
use crate::loss::{Partials, SphericalStats};

/// The partials of one example together with its input and target class.
#[derive(Debug, Clone, Copy)]
pub struct StepPartials<'a> {
    pub partials: Partials,
    pub class: usize,
    pub input: &'a [f64],
}

/// When to fold the factors back into the core.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RebasePolicy {
    /// Upper limit on `‖A‖_F·‖A⁻¹‖_F`.
    pub max_condition: f64,
    /// Rebase once more than this fraction of classes carry a row correction.
    pub max_correction_fraction: f64,
}

impl Default for RebasePolicy {
    fn default() -> Self {
        Self {
            max_condition: 1e8,
            max_correction_fraction: 0.25,
        }
    }
}

/// Multiply-add counts. Rebases are tallied separately since they are O(D·d²).
#[derive(Debug, Default)]
struct OpCounter {
    forward: AtomicU64,
    update: AtomicU64,
    rebase: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OpCounts {
    pub forward: u64,
    pub update: u64,
    pub rebase: u64,
}

// Below this |1 − β·hᵀh| the step matrix is treated as singular.
const SINGULAR_TOL: f64 = 1e-9;

#[derive(Debug)]
pub struct FactoredOutputLayer {
    core: Array2<f64>,
    mixer: Array2<f64>,
    mixer_inv: Array2<f64>,
    offset: Array1<f64>,
    gram: Array2<f64>,
    colsum: Array1<f64>,
    corrections: HashMap<usize, Array1<f64>>,
    input_dim: usize,
    with_bias: bool,
    policy: RebasePolicy,
    ops: OpCounter,
    rebases: usize,
}

impl Clone for FactoredOutputLayer {
    fn clone(&self) -> Self {
        let counts = self.op_counts();
        Self {
            core: self.core.clone(),
            mixer: self.mixer.clone(),
            mixer_inv: self.mixer_inv.clone(),
            offset: self.offset.clone(),
            gram: self.gram.clone(),
            colsum: self.colsum.clone(),
            corrections: self.corrections.clone(),
            input_dim: self.input_dim,
            with_bias: self.with_bias,
            policy: self.policy,
            ops: OpCounter {
                forward: AtomicU64::new(counts.forward),
                update: AtomicU64::new(counts.update),
                rebase: AtomicU64::new(counts.rebase),
            },
            rebases: self.rebases,
        }
    }
}

impl FactoredOutputLayer {
    /// All-zero weights (and bias, when `with_bias`).
    pub fn zeros(num_classes: usize, input_dim: usize, with_bias: bool) -> Self {
        let n = input_dim + with_bias as usize;
        // The caches of a zero core are zero; skip the O(D·d²) Gram product.
        let mut layer = Self::from_core(Array2::zeros((0, n)), input_dim, with_bias);
        layer.core = Array2::zeros((num_classes, n));
        layer
    }

    /// Wraps a dense layer. With `with_bias` the bias becomes an extra core column
    /// driven by an implicit constant-1 input; otherwise the bias must be zero.
    pub fn from_dense(dense: &DenseOutputLayer, with_bias: bool) -> Result<Self> {
        let d = dense.input_dim();
        if with_bias {
            let mut core = Array2::zeros((dense.num_classes(), d + 1));
            core.slice_mut(ndarray::s![.., ..d]).assign(&dense.weights);
            core.column_mut(d).assign(&dense.bias);
            Ok(Self::from_core(core, d, true))
        } else {
            if dense.bias.iter().any(|b| *b != 0.0) {
                return Err(Error::config("nonzero bias requires a layer built with_bias"));
            }
            Ok(Self::from_core(dense.weights.clone(), d, false))
        }
    }

    fn from_core(core: Array2<f64>, input_dim: usize, with_bias: bool) -> Self {
        let n = core.ncols();
        let gram = core.t().dot(&core);
        let colsum = core.sum_axis(Axis(0));
        Self {
            core,
            mixer: Array2::eye(n),
            mixer_inv: Array2::eye(n),
            offset: Array1::zeros(n),
            gram,
            colsum,
            corrections: HashMap::new(),
            input_dim,
            with_bias,
            policy: RebasePolicy::default(),
            ops: OpCounter::default(),
            rebases: 0,
        }
    }

    pub fn with_policy(mut self, policy: RebasePolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn num_classes(&self) -> usize {
        self.core.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn has_bias(&self) -> bool {
        self.with_bias
    }

    /// Internal width: `input_dim`, plus one for the folded bias.
    fn width(&self) -> usize {
        self.core.ncols()
    }

    pub fn gram(&self) -> &Array2<f64> {
        &self.gram
    }

    pub fn colsum(&self) -> &Array1<f64> {
        &self.colsum
    }

    pub fn corrections_len(&self) -> usize {
        self.corrections.len()
    }

    pub fn rebase_count(&self) -> usize {
        self.rebases
    }

    pub fn op_counts(&self) -> OpCounts {
        OpCounts {
            forward: self.ops.forward.load(Ordering::Relaxed),
            update: self.ops.update.load(Ordering::Relaxed),
            rebase: self.ops.rebase.load(Ordering::Relaxed),
        }
    }

    pub fn reset_op_counts(&self) {
        self.ops.forward.store(0, Ordering::Relaxed);
        self.ops.update.store(0, Ordering::Relaxed);
        self.ops.rebase.store(0, Ordering::Relaxed);
    }

    /// `‖A‖_F·‖A⁻¹‖_F`, an upper estimate of the mixer's condition number.
    pub fn condition_estimate(&self) -> f64 {
        frobenius(&self.mixer) * frobenius(&self.mixer_inv)
    }

    fn extended(&self, h: &[f64]) -> Result<Array1<f64>> {
        if h.len() != self.input_dim {
            return Err(Error::Dimension {
                what: "input length must match the layer input dimension",
                expected: self.input_dim,
                got: h.len(),
            });
        }
        let mut ext = Array1::zeros(self.width());
        ext.slice_mut(ndarray::s![..h.len()]).assign(&ArrayView1::from(h));
        if self.with_bias {
            ext[self.input_dim] = 1.0;
        }
        Ok(ext)
    }

    fn check_class(&self, c: usize) -> Result<()> {
        if c >= self.num_classes() {
            return Err(Error::Dimension {
                what: "class index must be below the number of classes",
                expected: self.num_classes(),
                got: c,
            });
        }
        Ok(())
    }

    fn count(counter: &AtomicU64, ops: usize) {
        counter.fetch_add(ops as u64, Ordering::Relaxed);
    }

    fn row_counted(&self, c: usize, counter: &AtomicU64) -> Array1<f64> {
        let n = self.width();
        let mut core_row = self.core.row(c).to_owned();
        if let Some(r) = self.corrections.get(&c) {
            core_row += r;
        }
        let row = core_row.dot(&self.mixer) + &self.offset;
        Self::count(counter, n * n + 2 * n);
        row
    }

    /// Row `c` of the represented matrix, with the bias as last entry when folded.
    pub fn row(&self, c: usize) -> Result<Array1<f64>> {
        self.check_class(c)?;
        Ok(self.row_counted(c, &self.ops.forward))
    }

    /// `(s, q, o_c)` of `o = W·h (+ b)` without forming `o`.
    pub fn forward_stats(&self, h: &[f64], c: usize) -> Result<SphericalStats> {
        self.check_class(c)?;
        let h = self.extended(h)?;
        let n = self.width();
        let s = self.colsum.dot(&h);
        let q = h.dot(&self.gram.dot(&h));
        let o_c = self.row_counted(c, &self.ops.forward).dot(&h);
        Self::count(&self.ops.forward, n * n + 3 * n);
        Ok(SphericalStats { s, q, o_c, y_c: 1.0 })
    }

    /// `∂L/∂h = Wᵀ·(∂L/∂o)` for spherical partials: `ds·Wᵀ1 + 2·dq·WᵀW·h + doc·w_c`.
    pub fn input_grad(&self, h: &[f64], c: usize, p: &Partials) -> Result<Array1<f64>> {
        self.check_class(c)?;
        let ext = self.extended(h)?;
        let n = self.width();
        let mut g = self.colsum.mapv(|v| p.ds * v);
        g.scaled_add(2.0 * p.dq, &self.gram.dot(&ext));
        g.scaled_add(p.doc, &self.row_counted(c, &self.ops.forward));
        Self::count(&self.ops.forward, n * n + 2 * n);
        Ok(g.slice(ndarray::s![..self.input_dim]).to_owned())
    }

    /// Exact SGD step `W ← W − lr·(ds·1·hᵀ + 2·dq·W·h·hᵀ + doc·e_c·hᵀ)`.
    pub fn sgd_step(&mut self, p: &StepPartials<'_>, lr: f64) -> Result<()> {
        self.check_class(p.class)?;
        if !p.partials.is_finite() || !lr.is_finite() {
            return Err(Error::domain("non-finite partials or learning rate"));
        }
        let h = self.extended(p.input)?;
        let Partials { ds, dq, doc } = p.partials;
        if ds == 0.0 && dq == 0.0 && doc == 0.0 {
            return Ok(());
        }
        let c = p.class;
        let n = self.width();
        let num_classes = self.num_classes() as f64;
        let beta = 2.0 * lr * dq;
        let kx = -lr * ds;
        let ky = -lr * doc;
        let hh = h.dot(&h);
        let denom = 1.0 - beta * hh;
        if denom.abs() < SINGULAR_TOL {
            self.singular_step(&h, c, beta, kx, ky);
            return Ok(());
        }

        let ctr = &self.ops.update;
        let w_c = self.row_counted(c, ctr);

        // Q' = M·Q·M + (Mv)xᵀ + x(Mv)ᵀ + (Mw_c)yᵀ + y(Mw_c)ᵀ + (x+y)(x+y)ᵀ + (D−1)xxᵀ,
        // with M = I − β·h·hᵀ and x, y both parallel to h.
        let z = self.gram.dot(&h);
        let hz = h.dot(&z);
        let mv = &self.colsum - &(beta * h.dot(&self.colsum) * &h);
        let mw = &w_c - &(beta * h.dot(&w_c) * &h);
        let mut t = kx * &mv + ky * &mw;
        t.scaled_add(-beta, &z);
        let coef = beta * beta * hz + num_classes * kx * kx + 2.0 * kx * ky + ky * ky;
        for i in 0..n {
            let (hi, ti) = (h[i], t[i]);
            let mut row = self.gram.row_mut(i);
            for j in 0..n {
                row[j] += hi * t[j] + ti * h[j] + coef * hi * h[j];
            }
        }
        Self::count(ctr, n * n + 3 * n * n + 9 * n);

        let mut colsum = mv;
        colsum.scaled_add(num_classes * kx + ky, &h);
        self.colsum = colsum;

        // A ← A·M, A⁻¹ ← M⁻¹·A⁻¹ with M⁻¹ = I + γ·h·hᵀ.
        let ah = self.mixer.dot(&h);
        let h_ainv = h.dot(&self.mixer_inv);
        let gamma = beta / denom;
        for i in 0..n {
            let mut a_row = self.mixer.row_mut(i);
            a_row.scaled_add(-beta * ah[i], &h);
            let mut inv_row = self.mixer_inv.row_mut(i);
            inv_row.scaled_add(gamma * h[i], &h_ainv);
        }
        Self::count(ctr, 4 * n * n);

        let uh = self.offset.dot(&h);
        self.offset.scaled_add(kx - beta * uh, &h);

        // The target row change y is expressed in core coordinates through the new A⁻¹.
        let h_core = self.mixer_inv.t().dot(&h);
        self.corrections
            .entry(c)
            .or_insert_with(|| Array1::zeros(n))
            .scaled_add(ky, &h_core);
        Self::count(ctr, n * n + 3 * n);

        let cond = self.condition_estimate();
        Self::count(ctr, 2 * n * n);
        if !(cond <= self.policy.max_condition)
            || self.corrections.len() as f64 > self.policy.max_correction_fraction * num_classes
        {
            self.rebase();
        }
        Ok(())
    }

    /// Fallback for a (numerically) singular step matrix: apply the update to an
    /// explicit core in O(D·d) and recompute the caches.
    fn singular_step(&mut self, h: &Array1<f64>, c: usize, beta: f64, kx: f64, ky: f64) {
        self.rebase();
        let n = self.width();
        let ch = self.core.dot(h);
        for (mut row, &v) in self.core.rows_mut().into_iter().zip(ch.iter()) {
            row.scaled_add(kx - beta * v, h);
        }
        self.core.row_mut(c).scaled_add(ky, h);
        self.gram = self.core.t().dot(&self.core);
        self.colsum = self.core.sum_axis(Axis(0));
        Self::count(&self.ops.rebase, self.num_classes() * (n * n + 3 * n));
    }

    /// Folds mixer, offset and corrections into the core and recomputes the caches.
    pub fn rebase(&mut self) {
        let n = self.width();
        for (c, r) in self.corrections.drain() {
            let mut row = self.core.row_mut(c);
            row += &r;
        }
        let mut core = self.core.dot(&self.mixer);
        core += &self.offset;
        self.core = core;
        self.mixer = Array2::eye(n);
        self.mixer_inv = Array2::eye(n);
        self.offset = Array1::zeros(n);
        self.gram = self.core.t().dot(&self.core);
        self.colsum = self.core.sum_axis(Axis(0));
        self.rebases += 1;
        Self::count(&self.ops.rebase, self.num_classes() * (2 * n * n + n));
    }

    /// The represented matrix as a dense layer. O(D·d²).
    pub fn materialize(&self) -> DenseOutputLayer {
        let mut core = self.core.clone();
        for (&c, r) in &self.corrections {
            let mut row = core.row_mut(c);
            row += r;
        }
        let mut w = core.dot(&self.mixer);
        w += &self.offset;
        if self.with_bias {
            let d = self.input_dim;
            DenseOutputLayer {
                bias: w.column(d).to_owned(),
                weights: w.slice(ndarray::s![.., ..d]).to_owned(),
            }
        } else {
            let num_classes = w.nrows();
            DenseOutputLayer {
                weights: w,
                bias: Array1::zeros(num_classes),
            }
        }
    }

    /// Relative deviation of the cached `WᵀW` and `Wᵀ1` from their exact values.
    pub fn cache_error(&self) -> (f64, f64) {
        let dense = self.materialize();
        let w = if self.with_bias {
            let mut w = Array2::zeros((dense.num_classes(), self.width()));
            w.slice_mut(ndarray::s![.., ..self.input_dim]).assign(&dense.weights);
            w.column_mut(self.input_dim).assign(&dense.bias);
            w
        } else {
            dense.weights
        };
        let gram = w.t().dot(&w);
        let colsum = w.sum_axis(Axis(0));
        let rel = |a: f64, b: f64| if b == 0.0 { a } else { a / b };
        (
            rel(frobenius(&(&self.gram - &gram)), frobenius(&gram)),
            rel(norm(&(&self.colsum - &colsum)), norm(&colsum)),
        )
    }
}

fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::log_taylor_from_stats;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_dense(rng: &mut ChaCha8Rng, num_classes: usize, d: usize, scale: f64) -> DenseOutputLayer {
        let w = Array2::from_shape_fn((num_classes, d), |_| {
            scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
        });
        let b = Array1::from_shape_fn(num_classes, |_| scale * rng.random_range(-1.0..1.0));
        DenseOutputLayer::new(w, b).unwrap()
    }

    fn random_input(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-12)
    }

    #[test]
    fn zero_layer_has_zero_stats() {
        let layer = FactoredOutputLayer::zeros(50, 8, true);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let st = layer.forward_stats(&random_input(&mut rng, 8), 7).unwrap();
        assert_eq!((st.s, st.q, st.o_c), (0.0, 0.0, 0.0));
        assert_eq!(layer.row(3).unwrap(), Array1::<f64>::zeros(9));
    }

    #[test]
    fn materialize_roundtrip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dense = random_dense(&mut rng, 40, 6, 1.0);
        assert_eq!(FactoredOutputLayer::from_dense(&dense, true).unwrap().materialize(), dense);
        let no_bias = DenseOutputLayer::new(dense.weights.clone(), Array1::zeros(40)).unwrap();
        assert_eq!(FactoredOutputLayer::from_dense(&no_bias, false).unwrap().materialize(), no_bias);
        assert!(FactoredOutputLayer::from_dense(&dense, false).is_err());
    }

    #[test]
    fn dimension_errors() {
        let layer = FactoredOutputLayer::zeros(10, 4, false);
        assert!(matches!(layer.forward_stats(&[0.0; 3], 0), Err(Error::Dimension { .. })));
        assert!(matches!(layer.forward_stats(&[0.0; 4], 10), Err(Error::Dimension { .. })));
    }

    #[test]
    fn stats_match_dense_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dense = random_dense(&mut rng, 500, 16, 0.5);
        let layer = FactoredOutputLayer::from_dense(&dense, true).unwrap();
        for _ in 0..20 {
            let h = random_input(&mut rng, 16);
            let c = rng.random_range(0..500);
            let a = layer.forward_stats(&h, c).unwrap();
            let b = dense.forward_stats(&h, c).unwrap();
            assert!(rel(a.s, b.s) < 1e-10 && rel(a.q, b.q) < 1e-10 && rel(a.o_c, b.o_c) < 1e-10);
        }
    }

    #[test]
    fn zero_partials_leave_layer_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dense = random_dense(&mut rng, 30, 5, 1.0);
        let mut layer = FactoredOutputLayer::from_dense(&dense, true).unwrap();
        let (gram, colsum) = (layer.gram().clone(), layer.colsum().clone());
        let h = random_input(&mut rng, 5);
        let step = StepPartials {
            partials: Partials { ds: 0.0, dq: 0.0, doc: 0.0 },
            class: 4,
            input: &h,
        };
        layer.sgd_step(&step, 0.1).unwrap();
        assert_eq!(layer.gram(), &gram);
        assert_eq!(layer.colsum(), &colsum);
        assert_eq!(layer.materialize(), dense);
    }

    #[test]
    fn single_step_from_zero_matches_closed_form() {
        let mut layer = FactoredOutputLayer::zeros(6, 3, false);
        let h = [0.5, -1.0, 2.0];
        let (a, bq, g, lr, c) = (0.3, 0.7, -1.1, 0.05, 2);
        layer
            .sgd_step(&StepPartials { partials: Partials { ds: a, dq: bq, doc: g }, class: c, input: &h }, lr)
            .unwrap();
        let w = layer.materialize().weights;
        for k in 0..6 {
            for j in 0..3 {
                let expected = -lr * (a * h[j] + if k == c { g * h[j] } else { 0.0 });
                assert!((w[[k, j]] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rows_outside_target_move_only_through_shared_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dense = random_dense(&mut rng, 20, 4, 1.0);
        let mut layer = FactoredOutputLayer::from_dense(&dense, true).unwrap();
        let mut reference = dense;
        for _ in 0..10 {
            let h = random_input(&mut rng, 4);
            let st = StepPartials { partials: Partials { ds: 0.2, dq: 0.1, doc: -0.5 }, class: 7, input: &h };
            layer.sgd_step(&st, 0.1).unwrap();
            reference.sgd_step(&st, 0.1).unwrap();
        }
        assert_eq!(layer.corrections_len(), 1);
        let diff = layer.materialize().rel_frobenius_diff(&reference);
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn lockstep_with_dense_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (num_classes, d) = (300, 8);
        let dense0 = random_dense(&mut rng, num_classes, d, 0.1);
        let mut fast = FactoredOutputLayer::from_dense(&dense0, true).unwrap();
        let mut slow = dense0;
        for _ in 0..200 {
            let h = random_input(&mut rng, d);
            let c = rng.random_range(0..num_classes);
            let a = fast.forward_stats(&h, c).unwrap();
            let b = slow.forward_stats(&h, c).unwrap();
            assert!(rel(a.q, b.q) < 1e-8 && rel(a.o_c, b.o_c) < 1e-8);
            let (_, partials) = log_taylor_from_stats(&a, num_classes);
            let step = StepPartials { partials, class: c, input: &h };
            fast.sgd_step(&step, 0.1).unwrap();
            slow.sgd_step(&step, 0.1).unwrap();
        }
        assert!(fast.materialize().rel_frobenius_diff(&slow) < 1e-10);
        let (gram_err, colsum_err) = fast.cache_error();
        assert!(gram_err < 1e-10 && colsum_err < 1e-10);
    }

    #[test]
    fn loss_trajectory_matches_dense_gradient_training() {
        use crate::loss::LogitsVector;
        use crate::objective::LossKind;
        for loss in [LossKind::LogTaylor, LossKind::Mse, LossKind::BoundFixed { xi: 1.5 }] {
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let (num_classes, d) = (200, 6);
            let mut slow = random_dense(&mut rng, num_classes, d, 0.1);
            let mut fast = FactoredOutputLayer::from_dense(&slow, true).unwrap();
            let mut worst = 0.0f64;
            for _ in 0..500 {
                let h = random_input(&mut rng, d);
                let c = rng.random_range(0..num_classes);
                let o = LogitsVector::new(slow.forward(&h).unwrap().to_vec()).unwrap();
                let dense = loss.eval(&o, o.target(c).unwrap());
                slow.sgd_step_dense(&h, ndarray::ArrayView1::from(&dense.grad_o), 0.05).unwrap();
                let (value, partials) = loss.eval_stats(&fast.forward_stats(&h, c).unwrap(), num_classes).unwrap();
                fast.sgd_step(&StepPartials { partials, class: c, input: &h }, 0.05).unwrap();
                worst = worst.max(rel(value, dense.loss));
            }
            assert!(worst < 1e-4, "{loss}: {worst}");
        }
    }

    #[test]
    fn input_grad_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dense = random_dense(&mut rng, 50, 7, 0.5);
        let layer = FactoredOutputLayer::from_dense(&dense, true).unwrap();
        let h = random_input(&mut rng, 7);
        let p = Partials { ds: 0.3, dq: -0.2, doc: 1.5 };
        let g_dense = dense.input_grad(dense.grad_o_from_partials(&h, 9, &p).unwrap().view());
        let g_fast = layer.input_grad(&h, 9, &p).unwrap();
        for (a, b) in g_fast.iter().zip(g_dense.iter()) {
            assert!((a - b).abs() < 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn rebase_preserves_represented_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut layer = FactoredOutputLayer::from_dense(&random_dense(&mut rng, 80, 6, 0.3), true).unwrap();
        for _ in 0..30 {
            let h = random_input(&mut rng, 6);
            let c = rng.random_range(0..10);
            let st = layer.forward_stats(&h, c).unwrap();
            let (_, partials) = log_taylor_from_stats(&st, 80);
            layer.sgd_step(&StepPartials { partials, class: c, input: &h }, 0.2).unwrap();
        }
        let before = layer.materialize();
        let h = random_input(&mut rng, 6);
        let st_before = layer.forward_stats(&h, 3).unwrap();
        layer.rebase();
        let once = layer.materialize();
        assert!(once.rel_frobenius_diff(&before) < 1e-10);
        let st_after = layer.forward_stats(&h, 3).unwrap();
        assert!(rel(st_after.q, st_before.q) < 1e-10 && rel(st_after.o_c, st_before.o_c) < 1e-10);
        layer.rebase();
        assert!(layer.materialize().rel_frobenius_diff(&once) < 1e-14);
        assert_eq!(layer.corrections_len(), 0);
        let (gram_err, colsum_err) = layer.cache_error();
        assert!(gram_err < 1e-10 && colsum_err < 1e-10);
    }

    #[test]
    fn correction_budget_triggers_rebase() {
        let mut layer = FactoredOutputLayer::zeros(8, 2, false);
        let h = [1.0, 0.5];
        for c in 0..3 {
            let p = Partials { ds: 0.0, dq: 0.0, doc: 1.0 };
            layer.sgd_step(&StepPartials { partials: p, class: c, input: &h }, 0.1).unwrap();
        }
        // 8/4 = 2 corrections allowed; the third class forces a fold.
        assert_eq!(layer.rebase_count(), 1);
        assert_eq!(layer.corrections_len(), 0);
    }

    #[test]
    fn singular_step_is_handled_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dense = random_dense(&mut rng, 12, 3, 1.0);
        let mut fast = FactoredOutputLayer::from_dense(&dense, true).unwrap();
        let mut slow = dense;
        let h = [1.0, 0.0, 0.0];
        // With the folded bias hᵀh = 2, so β = 1/2 makes I − β·h·hᵀ singular.
        let lr = 0.25;
        let p = Partials { ds: 0.1, dq: 1.0, doc: -0.3 };
        let step = StepPartials { partials: p, class: 5, input: &h };
        fast.sgd_step(&step, lr).unwrap();
        slow.sgd_step(&step, lr).unwrap();
        assert!(fast.materialize().rel_frobenius_diff(&slow) < 1e-12);
        assert!(fast.rebase_count() >= 1);
    }

    #[test]
    fn op_counts_do_not_depend_on_class_count() {
        let run = |num_classes: usize| {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut layer = FactoredOutputLayer::zeros(num_classes, 16, true);
            for _ in 0..50 {
                let h = random_input(&mut rng, 16);
                let c = rng.random_range(0..100);
                let st = layer.forward_stats(&h, c).unwrap();
                let (_, partials) = log_taylor_from_stats(&st, 1000);
                layer.sgd_step(&StepPartials { partials, class: c, input: &h }, 0.05).unwrap();
            }
            layer.op_counts()
        };
        let small = run(1000);
        let large = run(20_000);
        assert_eq!(small.forward, large.forward);
        assert_eq!(small.update, large.update);
        assert_eq!(small.rebase, 0);
    }
}
