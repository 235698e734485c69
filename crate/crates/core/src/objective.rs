//! One enum over every trainable loss, used by the trainer and the CLI.

use std::fmt;

use crate::bound::{spherical_bound_from_stats, spherical_bound_loss, XiMode, XiParam};
use crate::error::{Error, Result};
use crate::loss::{
    log_softmax_abs_loss, log_softmax_loss, log_spherical_from_stats, log_spherical_softmax_loss,
    log_taylor_from_stats, log_taylor_softmax_loss, mse_from_stats, mse_loss, taylor_numerator, Epsilon,
    LogitsVector, LossGrad, Partials, SphericalStats, TargetIndex,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    LogSoftmax,
    LogSoftmaxAbs,
    Mse,
    LogSpherical { eps: Epsilon },
    LogTaylor,
    BoundFixed { xi: f64 },
    BoundOptimized,
}

impl LossKind {
    pub const NAMES: [&'static str; 7] = [
        "log_softmax",
        "log_softmax_abs",
        "mse",
        "log_spherical",
        "log_taylor",
        "bound_fixed",
        "bound_optimized",
    ];

    /// Parses a loss name; `eps` and `xi` fill the parameterized variants.
    pub fn parse(name: &str, eps: Epsilon, xi: f64) -> Result<Self> {
        Ok(match name {
            "log_softmax" => Self::LogSoftmax,
            "log_softmax_abs" => Self::LogSoftmaxAbs,
            "mse" => Self::Mse,
            "log_spherical" => Self::LogSpherical { eps },
            "log_taylor" => Self::LogTaylor,
            "bound_fixed" => Self::BoundFixed { xi },
            "bound_optimized" => Self::BoundOptimized,
            other => {
                return Err(Error::config(format!(
                    "unknown loss `{other}` (expected one of {})",
                    Self::NAMES.join(", ")
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::LogSoftmax => "log_softmax",
            Self::LogSoftmaxAbs => "log_softmax_abs",
            Self::Mse => "mse",
            Self::LogSpherical { .. } => "log_spherical",
            Self::LogTaylor => "log_taylor",
            Self::BoundFixed { .. } => "bound_fixed",
            Self::BoundOptimized => "bound_optimized",
        }
    }

    /// Whether the loss depends on the logits only through `(s, q, o_c)`.
    pub fn is_spherical(&self) -> bool {
        !matches!(self, Self::LogSoftmax | Self::LogSoftmaxAbs)
    }

    /// Whether the loss is unchanged under `o → −o`. Such losses have zero
    /// gradient at `o = 0`, so an all-zero output layer never moves.
    pub fn is_even(&self) -> bool {
        matches!(self, Self::LogSoftmaxAbs | Self::LogSpherical { .. })
    }

    pub fn eval(&self, o: &LogitsVector, c: TargetIndex) -> LossGrad {
        match *self {
            Self::LogSoftmax => log_softmax_loss(o, c),
            Self::LogSoftmaxAbs => log_softmax_abs_loss(o, c),
            Self::Mse => mse_loss(o, c),
            Self::LogSpherical { eps } => log_spherical_softmax_loss(o, c, eps),
            Self::LogTaylor => log_taylor_softmax_loss(o, c),
            Self::BoundFixed { xi } => spherical_bound_loss(o, c, XiParam::fixed(xi)).0,
            Self::BoundOptimized => spherical_bound_loss(o, c, XiParam::optimized()).0,
        }
    }

    /// Loss and partials from statistics alone; `None` for the non-spherical losses.
    pub fn eval_stats(&self, stats: &SphericalStats, dim: usize) -> Option<(f64, Partials)> {
        match *self {
            Self::LogSoftmax | Self::LogSoftmaxAbs => None,
            Self::Mse => Some(mse_from_stats(stats)),
            Self::LogSpherical { eps } => Some(log_spherical_from_stats(stats, dim, eps)),
            Self::LogTaylor => Some(log_taylor_from_stats(stats, dim)),
            Self::BoundFixed { xi } => {
                let (l, p, _) = spherical_bound_from_stats(stats, dim, XiParam::fixed(xi));
                Some((l, p))
            }
            Self::BoundOptimized => {
                let (l, p, _) = spherical_bound_from_stats(
                    stats,
                    dim,
                    XiParam {
                        xi: 1.0,
                        mode: XiMode::PerExampleOptimized,
                    },
                );
                Some((l, p))
            }
        }
    }

    /// Monotone per-class scores of the model's prediction: ranking these gives
    /// the predicted class and the top-k sets.
    pub fn scores(&self, o: &[f64]) -> Vec<f64> {
        match *self {
            Self::LogSoftmax | Self::Mse | Self::BoundFixed { .. } | Self::BoundOptimized => o.to_vec(),
            Self::LogSoftmaxAbs => o.iter().map(|v| v.abs()).collect(),
            Self::LogSpherical { eps } => o.iter().map(|v| v * v + eps.value()).collect(),
            Self::LogTaylor => o.iter().map(|&v| taylor_numerator(v)).collect(),
        }
    }

    /// The reported per-example "negll": the negative log-likelihood of the
    /// predictive distribution the loss defines. MSE models report their squared
    /// error instead, and the bounds report the log-softmax they bound.
    pub fn negll(&self, o: &LogitsVector, c: TargetIndex) -> f64 {
        match self {
            Self::BoundFixed { .. } | Self::BoundOptimized => log_softmax_loss(o, c).loss,
            Self::Mse => mse_loss(o, c).loss,
            _ => self.eval(o, c).loss,
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::LogSpherical { eps } => write!(f, "log_spherical(eps={})", eps.value()),
            Self::BoundFixed { xi } => write!(f, "bound_fixed(xi={xi})"),
            other => f.write_str(other.name()),
        }
    }
}
