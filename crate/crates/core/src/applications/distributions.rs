//! Moment-matched sampling across light- and heavy-tailed families.
//!
//! Each family is drawn i.i.d. per coordinate, standardized to zero mean and
//! unit variance, then mapped through μ + Σ^{1/2}·z. First and second moments
//! match the target exactly in the infinite-sample limit; higher cross
//! moments are family-specific, which is the whole point of the zoo.

use super::AppError;
use crate::linalg;
use crate::risk::MomentSet;
use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, LogNormal, Pareto, StandardNormal, StudentT, Uniform, Weibull};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

fn default_df() -> f64 {
    5.0
}
fn default_weibull_shape() -> f64 {
    1.5
}
fn default_lognormal_sigma() -> f64 {
    0.5
}
fn default_powerlaw_alpha() -> f64 {
    4.5
}

/// Base sampling family. Parameters default to the bundled choices
/// (Weibull 1.5, lognormal σ = 0.5, power-law α = 4.5, t df = 5).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Uniform,
    Normal,
    StudentT {
        #[serde(default = "default_df")]
        df: f64,
    },
    Weibull {
        #[serde(default = "default_weibull_shape")]
        shape: f64,
    },
    Lognormal {
        #[serde(default = "default_lognormal_sigma")]
        sigma: f64,
    },
    Powerlaw {
        #[serde(default = "default_powerlaw_alpha")]
        alpha: f64,
    },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Uniform => "uniform",
            Family::Normal => "normal",
            Family::StudentT { .. } => "student_t",
            Family::Weibull { .. } => "weibull",
            Family::Lognormal { .. } => "lognormal",
            Family::Powerlaw { .. } => "powerlaw",
        }
    }

    /// The six families used by the experiments, with default parameters.
    pub fn zoo() -> Vec<Family> {
        vec![
            Family::Uniform,
            Family::Normal,
            Family::StudentT { df: default_df() },
            Family::Weibull {
                shape: default_weibull_shape(),
            },
            Family::Lognormal {
                sigma: default_lognormal_sigma(),
            },
            Family::Powerlaw {
                alpha: default_powerlaw_alpha(),
            },
        ]
    }

    fn validate(&self) -> Result<(), AppError> {
        match *self {
            Family::StudentT { df } if df <= 2.0 => Err(AppError::InvalidParameter(format!(
                "student_t requires df > 2 for a finite covariance, got {df}"
            ))),
            Family::Weibull { shape } if shape <= 0.0 => Err(AppError::InvalidParameter(
                format!("weibull shape must be positive, got {shape}"),
            )),
            Family::Lognormal { sigma } if sigma <= 0.0 => Err(AppError::InvalidParameter(
                format!("lognormal sigma must be positive, got {sigma}"),
            )),
            Family::Powerlaw { alpha } if alpha <= 2.0 => Err(AppError::InvalidParameter(
                format!("power-law tail index must exceed 2 for a finite variance, got {alpha}"),
            )),
            _ => Ok(()),
        }
    }
}

/// Standardized (zero-mean, unit-variance) scalar sampler for one family.
enum Standardized {
    Uniform(Uniform<f64>),
    Normal,
    StudentT { dist: StudentT<f64>, scale: f64 },
    Shifted { dist: ShiftedKind, mean: f64, inv_std: f64 },
}

enum ShiftedKind {
    Weibull(Weibull<f64>),
    Lognormal(LogNormal<f64>),
    Pareto(Pareto<f64>),
}

impl Standardized {
    fn new(family: Family) -> Result<Self, AppError> {
        family.validate()?;
        Ok(match family {
            Family::Uniform => {
                let half = 3.0_f64.sqrt();
                Standardized::Uniform(
                    Uniform::new(-half, half)
                        .map_err(|e| AppError::InvalidParameter(e.to_string()))?,
                )
            }
            Family::Normal => Standardized::Normal,
            Family::StudentT { df } => Standardized::StudentT {
                dist: StudentT::new(df).map_err(|e| AppError::InvalidParameter(e.to_string()))?,
                scale: ((df - 2.0) / df).sqrt(),
            },
            Family::Weibull { shape } => {
                let mean = gamma(1.0 + 1.0 / shape);
                let var = gamma(1.0 + 2.0 / shape) - mean * mean;
                Standardized::Shifted {
                    dist: ShiftedKind::Weibull(
                        Weibull::new(1.0, shape)
                            .map_err(|e| AppError::InvalidParameter(e.to_string()))?,
                    ),
                    mean,
                    inv_std: 1.0 / var.sqrt(),
                }
            }
            Family::Lognormal { sigma } => {
                let s2 = sigma * sigma;
                let mean = (0.5 * s2).exp();
                let var = (s2.exp() - 1.0) * s2.exp();
                Standardized::Shifted {
                    dist: ShiftedKind::Lognormal(
                        LogNormal::new(0.0, sigma)
                            .map_err(|e| AppError::InvalidParameter(e.to_string()))?,
                    ),
                    mean,
                    inv_std: 1.0 / var.sqrt(),
                }
            }
            Family::Powerlaw { alpha } => {
                let mean = alpha / (alpha - 1.0);
                let var = alpha / ((alpha - 1.0) * (alpha - 1.0) * (alpha - 2.0));
                Standardized::Shifted {
                    dist: ShiftedKind::Pareto(
                        Pareto::new(1.0, alpha)
                            .map_err(|e| AppError::InvalidParameter(e.to_string()))?,
                    ),
                    mean,
                    inv_std: 1.0 / var.sqrt(),
                }
            }
        })
    }

    fn draw(&self, rng: &mut impl Rng) -> f64 {
        match self {
            Standardized::Uniform(d) => d.sample(rng),
            Standardized::Normal => StandardNormal.sample(rng),
            Standardized::StudentT { dist, scale } => dist.sample(rng) * scale,
            Standardized::Shifted {
                dist,
                mean,
                inv_std,
            } => {
                let raw = match dist {
                    ShiftedKind::Weibull(d) => d.sample(rng),
                    ShiftedKind::Lognormal(d) => d.sample(rng),
                    ShiftedKind::Pareto(d) => d.sample(rng),
                };
                (raw - mean) * inv_std
            }
        }
    }
}

/// A sampling recipe: family, target moments, and an RNG seed.
#[derive(Debug, Clone)]
pub struct DistributionSpec {
    pub family: Family,
    pub target: MomentSet,
    pub seed: u64,
}

impl DistributionSpec {
    pub fn new(family: Family, target: MomentSet, seed: u64) -> Self {
        DistributionSpec {
            family,
            target,
            seed,
        }
    }
}

/// Draws `n_samples` rows, each a sample of the moment-matched distribution.
pub fn sample(spec: &DistributionSpec, n_samples: usize) -> Result<DMatrix<f64>, AppError> {
    let sampler = Standardized::new(spec.family)?;
    let dim = spec.target.dim();
    let half = linalg::sym_sqrt(spec.target.covariance());
    let mu = spec.target.mean();
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let mut out = DMatrix::zeros(n_samples, dim);
    let mut z = nalgebra::DVector::zeros(dim);
    for r in 0..n_samples {
        for k in 0..dim {
            z[k] = sampler.draw(&mut rng);
        }
        let x = &half * &z + mu;
        out.row_mut(r).copy_from(&x.transpose());
    }
    Ok(out)
}
