//! Quadratic variational upper bound of log-sum-exp and its spherical form.
//!
//! With every per-class variational parameter tied to one shared `ξ` and the
//! offset `α` set to its minimizer `α* = s/D + (D−2)/(4Dλ(ξ))`, the bound on
//! the log-softmax loss depends on the logits only through `(s, q, o_c)`:
//!
//! ```text
//! −(D−2)²/(16D·λ) − (D/2)ξ − Dλξ² + D·log(1+e^ξ) + s/D + (q − s²/D)λ − o_c
//! ```

use crate::error::{Error, Result};
use crate::loss::{
    log_softmax_loss, summary_stats, LogitsVector, LossGrad, Partials, SphericalStats, TargetIndex,
};

/// `λ(ξ) = (σ(ξ) − 1/2) / (2ξ)`, continuous through `ξ = 0` where it equals 1/8.
pub fn lambda_xi(xi: f64) -> f64 {
    if xi.abs() < 1e-4 {
        0.125 - xi * xi / 96.0
    } else {
        // σ(ξ) − 1/2 = tanh(ξ/2)/2
        (0.5 * xi).tanh() / (4.0 * xi)
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Per-class form of the bound, O(D). Upper-bounds `logsumexp(o)` for any `alpha` and `xis`.
pub fn bouchard_lse_bound_general(o: &[f64], alpha: f64, xis: &[f64]) -> Result<f64> {
    if o.len() != xis.len() {
        return Err(Error::Dimension {
            what: "one variational parameter per logit",
            expected: o.len(),
            got: xis.len(),
        });
    }
    let mut total = alpha;
    for (&ok, &xk) in o.iter().zip(xis) {
        let centered = ok - alpha;
        total += 0.5 * (centered - xk) + lambda_xi(xk) * (centered * centered - xk * xk) + softplus(xk);
    }
    Ok(total)
}

/// Offset minimizing the shared-ξ general bound.
pub fn optimal_alpha(s: f64, dim: usize, xi: f64) -> f64 {
    let d = dim as f64;
    s / d + (d - 2.0) / (4.0 * d * lambda_xi(xi))
}

/// The spherical bound on the log-softmax loss evaluated from its statistics.
pub fn spherical_bound_value(stats: &SphericalStats, dim: usize, xi: f64) -> f64 {
    let d = dim as f64;
    let lam = lambda_xi(xi);
    let spread = stats.q - stats.s * stats.s / d;
    -(d - 2.0) * (d - 2.0) / (16.0 * d * lam) - 0.5 * d * xi - d * lam * xi * xi
        + d * softplus(xi)
        + stats.s / d
        + spread * lam
        - stats.o_c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XiMode {
    Fixed,
    /// Recompute the tightest `ξ` for every example.
    PerExampleOptimized,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XiParam {
    pub xi: f64,
    pub mode: XiMode,
}

impl XiParam {
    pub fn fixed(xi: f64) -> Self {
        Self {
            xi,
            mode: XiMode::Fixed,
        }
    }

    pub fn optimized() -> Self {
        Self {
            xi: 1.0,
            mode: XiMode::PerExampleOptimized,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundValue {
    pub bound: f64,
    pub true_loss: Option<f64>,
    /// `bound − true_loss`, nonnegative up to rounding.
    pub gap: Option<f64>,
    /// The `ξ` the bound was evaluated at.
    pub xi: f64,
    /// Set when the per-example search failed numerically and `ξ = 1` was used.
    pub fallback: bool,
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
pub fn golden_section_min<F>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    let x = 0.5 * (lo + hi);
    let fx = f(x);
    // The endpoints are not probed by the interior points.
    [(x, fx), (x1, f1), (x2, f2)]
        .into_iter()
        .fold((x, fx), |best, cand| if cand.1 < best.1 { cand } else { best })
}

const XI_TOL: f64 = 1e-10;
const SCAN_POINTS: usize = 64;

/// Search interval upper end for the per-example `ξ`.
pub fn xi_search_max(stats: &SphericalStats) -> f64 {
    10.0 + stats.q.max(0.0).sqrt()
}

/// `ξ* ≥ 0` minimizing the spherical bound for fixed statistics.
///
/// Golden-section search over `[0, 10 + √q]`; the result is compared against a
/// coarse scan and, if the scan finds a lower value (the objective was not
/// unimodal on the bracket), local searches are restarted from
/// `{0, 1, 4, ξ_max}` and the best scan point.
pub fn optimize_xi(stats: &SphericalStats, dim: usize) -> f64 {
    optimize_xi_detailed(stats, dim).0
}

/// Like [`optimize_xi`] but also returns the bound at the optimum.
pub fn optimize_xi_detailed(stats: &SphericalStats, dim: usize) -> (f64, f64) {
    let f = |xi: f64| spherical_bound_value(stats, dim, xi);
    let hi = xi_search_max(stats);
    let (mut best_x, mut best_f) = golden_section_min(f, 0.0, hi, XI_TOL);

    let step = hi / SCAN_POINTS as f64;
    let scan = (0..=SCAN_POINTS).map(|i| i as f64 * step);
    let (scan_x, scan_f) = scan
        .map(|x| (x, f(x)))
        .fold((0.0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b });
    if scan_f < best_f - 1e-12 {
        for start in [0.0, 1.0, 4.0, hi, scan_x] {
            let lo = (start - step).max(0.0);
            let up = (start + step).min(hi);
            let (x, fx) = golden_section_min(f, lo, up, XI_TOL);
            if fx < best_f {
                best_x = x;
                best_f = fx;
            }
        }
    }
    (best_x, best_f)
}

/// Trainable spherical upper bound of the log-softmax loss.
///
/// The gradient treats `ξ` as a constant. In optimized mode this is exact at the
/// inner optimum by the envelope argument.
pub fn spherical_bound_loss(o: &LogitsVector, c: TargetIndex, xi: XiParam) -> (LossGrad, BoundValue) {
    let dim = o.dim();
    let stats = summary_stats(o, c);
    let (bound, partials, mut info) = spherical_bound_from_stats(&stats, dim, xi);

    let d = dim as f64;
    let lam = lambda_xi(info.xi);
    let mean = stats.s / d;
    let mut grad_o: Vec<f64> = o
        .values()
        .iter()
        .map(|v| 1.0 / d + 2.0 * lam * (v - mean))
        .collect();
    grad_o[c.get()] -= 1.0;

    let true_loss = log_softmax_loss(o, c).loss;
    info.true_loss = Some(true_loss);
    info.gap = Some(bound - true_loss);
    (
        LossGrad {
            loss: bound,
            grad_o,
            partials: Some(partials),
        },
        info,
    )
}

/// Bound value and partials from statistics alone. `true_loss` is left empty.
pub fn spherical_bound_from_stats(
    stats: &SphericalStats,
    dim: usize,
    xi: XiParam,
) -> (f64, Partials, BoundValue) {
    let (xi_used, fallback) = match xi.mode {
        XiMode::Fixed => (xi.xi, false),
        XiMode::PerExampleOptimized => {
            let (x, fx) = optimize_xi_detailed(stats, dim);
            if x.is_finite() && fx.is_finite() {
                (x, false)
            } else {
                (1.0, true)
            }
        }
    };
    let d = dim as f64;
    let lam = lambda_xi(xi_used);
    let bound = spherical_bound_value(stats, dim, xi_used);
    let partials = Partials {
        ds: 1.0 / d - 2.0 * stats.s * lam / d,
        dq: lam,
        doc: -1.0,
    };
    (
        bound,
        partials,
        BoundValue {
            bound,
            true_loss: None,
            gap: None,
            xi: xi_used,
            fallback,
        },
    )
}
