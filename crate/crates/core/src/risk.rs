//! Moment ambiguity sets and worst-case CVaR of quadratic losses.
//!
//! The ambiguity set 𝒫(μ, Σ) is the family of all distributions sharing a
//! fixed mean and covariance. For a quadratic loss L(ξ) = ξᵀΠξ + 2θᵀξ + ρ,
//! the worst-case CVaR at level ε over 𝒫 equals
//!
//! ```text
//!     inf over (β, N ⪰ 0, N ⪰ [[Π, θ],[θᵀ, ρ−β]])  of  β + (1/ε)·Tr(Ω N)
//! ```
//!
//! with Ω the augmented second-order moment matrix. That program is solved
//! here on the PSD cone with β folded in as a free scalar.

use crate::linalg;
use crate::sdp::{ConicProgram, SolveStatus, SolverOptions, SolverReport};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// QC feasibility tolerance: a "≤ 0" test passes when the optimal value is
/// at most this.
pub const DEFAULT_TOL_FEAS: f64 = 1e-7;

/// Eigenvalue band treated as numerically singular; ridge added before
/// inversion-dependent paths.
pub const COVARIANCE_RIDGE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum RiskError {
    #[error("risk level must be in (0,1), got {0}")]
    InvalidRiskLevel(f64),
    #[error("dimension mismatch: {context} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("covariance is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPsd(f64),
    #[error("covariance is singular and cannot be inverted")]
    SingularCovariance,
    #[error("empty sample set")]
    EmptyInput,
    #[error("conic solve failed with status {status:?} (primal residual {residual:.3e})")]
    SolverFailure {
        status: SolveStatus,
        residual: f64,
    },
    #[error("WC-CVaR program is unbounded below")]
    Unbounded,
    #[error(transparent)]
    Sdp(#[from] crate::sdp::SdpError),
}

/// Mean/covariance pair defining the ambiguity set 𝒫(μ, Σ).
///
/// The covariance is symmetrized on construction and small negative
/// eigenvalues (round-off) are clipped at zero.
#[derive(Debug, Clone)]
pub struct MomentSet {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl MomentSet {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self, RiskError> {
        let n = mean.len();
        if covariance.nrows() != n || covariance.ncols() != n {
            return Err(RiskError::DimensionMismatch {
                context: "covariance",
                expected: n,
                got: covariance.nrows(),
            });
        }
        let sym = linalg::symmetrize(&covariance);
        let min_eig = linalg::min_eigenvalue(&sym);
        if min_eig < -COVARIANCE_RIDGE {
            return Err(RiskError::NotPsd(min_eig));
        }
        let covariance = if min_eig < 0.0 {
            linalg::clip_eigenvalues(&sym, 0.0)
        } else {
            sym
        };
        Ok(MomentSet { mean, covariance })
    }

    /// Zero-mean set with the given covariance.
    pub fn centered(covariance: DMatrix<f64>) -> Result<Self, RiskError> {
        let n = covariance.nrows();
        Self::new(DVector::zeros(n), covariance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Σ⁻¹ with the ridge rule: eigenvalues within the singular band get a
    /// 1e-10 ridge first; fails if Σ is singular beyond that.
    pub fn inverse_covariance(&self) -> Result<DMatrix<f64>, RiskError> {
        let min_eig = linalg::min_eigenvalue(&self.covariance);
        let m = if min_eig < COVARIANCE_RIDGE {
            &self.covariance + DMatrix::identity(self.dim(), self.dim()) * COVARIANCE_RIDGE
        } else {
            self.covariance.clone()
        };
        linalg::spd_inverse(&m).ok_or(RiskError::SingularCovariance)
    }

    pub fn omega(&self) -> AugmentedMoment {
        build_omega(self)
    }
}

/// Augmented second-order moment matrix Ω = [[Σ + μμᵀ, μ],[μᵀ, 1]].
#[derive(Debug, Clone)]
pub struct AugmentedMoment {
    omega: DMatrix<f64>,
}

impl AugmentedMoment {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn dim(&self) -> usize {
        self.omega.nrows()
    }
}

/// Builds the augmented moment matrix of the lifted variable [ξ; 1].
pub fn build_omega(ms: &MomentSet) -> AugmentedMoment {
    let n = ms.dim();
    let mut omega = DMatrix::zeros(n + 1, n + 1);
    let second = ms.covariance() + ms.mean() * ms.mean().transpose();
    omega.view_mut((0, 0), (n, n)).copy_from(&second);
    omega.view_mut((0, n), (n, 1)).copy_from(ms.mean());
    omega.view_mut((n, 0), (1, n)).copy_from(&ms.mean().transpose());
    omega[(n, n)] = 1.0;
    AugmentedMoment { omega }
}

/// Quadratic loss ξ ↦ ξᵀΠξ + 2θᵀξ + ρ. Π may be indefinite.
#[derive(Debug, Clone)]
pub struct QuadraticLoss {
    quad: DMatrix<f64>,
    lin: DVector<f64>,
    constant: f64,
}

impl QuadraticLoss {
    pub fn new(quad: DMatrix<f64>, lin: DVector<f64>, constant: f64) -> Result<Self, RiskError> {
        let n = lin.len();
        if quad.nrows() != n || quad.ncols() != n {
            return Err(RiskError::DimensionMismatch {
                context: "loss quadratic term",
                expected: n,
                got: quad.nrows(),
            });
        }
        Ok(QuadraticLoss {
            quad: linalg::symmetrize(&quad),
            lin,
            constant,
        })
    }

    /// Constant loss of dimension `n`.
    pub fn constant_loss(c: f64, n: usize) -> Self {
        QuadraticLoss {
            quad: DMatrix::zeros(n, n),
            lin: DVector::zeros(n),
            constant: c,
        }
    }

    /// Purely quadratic loss ξᵀΠξ.
    pub fn pure_quadratic(quad: DMatrix<f64>) -> Result<Self, RiskError> {
        let n = quad.nrows();
        Self::new(quad, DVector::zeros(n), 0.0)
    }

    pub fn dim(&self) -> usize {
        self.lin.len()
    }

    pub fn quad(&self) -> &DMatrix<f64> {
        &self.quad
    }

    pub fn lin(&self) -> &DVector<f64> {
        &self.lin
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> f64 {
        linalg::quad_form(&self.quad, x) + 2.0 * self.lin.dot(x) + self.constant
    }

    /// Loss shifted by a constant: L + c.
    pub fn shifted(&self, c: f64) -> Self {
        QuadraticLoss {
            quad: self.quad.clone(),
            lin: self.lin.clone(),
            constant: self.constant + c,
        }
    }

    /// Loss scaled by a ≥ 0: a·L.
    pub fn scaled(&self, a: f64) -> Self {
        QuadraticLoss {
            quad: &self.quad * a,
            lin: &self.lin * a,
            constant: self.constant * a,
        }
    }

    /// Pointwise sum of two losses.
    pub fn plus(&self, other: &QuadraticLoss) -> Result<Self, RiskError> {
        if other.dim() != self.dim() {
            return Err(RiskError::DimensionMismatch {
                context: "loss sum",
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(QuadraticLoss {
            quad: &self.quad + &other.quad,
            lin: &self.lin + &other.lin,
            constant: self.constant + other.constant,
        })
    }

    /// Lifted form [[Π, θ],[θᵀ, ρ]] acting on [ξ; 1].
    pub fn lifted(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut h = DMatrix::zeros(n + 1, n + 1);
        h.view_mut((0, 0), (n, n)).copy_from(&self.quad);
        h.view_mut((0, n), (n, 1)).copy_from(&self.lin);
        h.view_mut((n, 0), (1, n)).copy_from(&self.lin.transpose());
        h[(n, n)] = self.constant;
        h
    }

    /// Loss built from a lifted symmetric matrix H acting on [ξ; 1].
    pub fn from_lifted(h: &DMatrix<f64>) -> Result<Self, RiskError> {
        let n = h.nrows() - 1;
        let quad = h.view((0, 0), (n, n)).into_owned();
        let lin = h.view((0, n), (n, 1)).into_owned();
        Self::new(quad, DVector::from_column_slice(lin.as_slice()), h[(n, n)])
    }
}

/// Risk level ε ∈ (0, 1). Smaller ε looks deeper into the tail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskLevel(f64);

impl RiskLevel {
    pub fn new(epsilon: f64) -> Result<Self, RiskError> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(RiskError::InvalidRiskLevel(epsilon));
        }
        Ok(RiskLevel(epsilon))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// WC-CVaR optimum together with the minimizing β and the solver report.
#[derive(Debug, Clone)]
pub struct WcCvar {
    pub value: f64,
    pub beta: f64,
    pub report: SolverReport,
}

/// Worst-case CVaR of a quadratic loss over 𝒫(μ, Σ), as a PSD-cone program.
pub fn wc_cvar_quadratic(
    loss: &QuadraticLoss,
    ms: &MomentSet,
    eps: RiskLevel,
) -> Result<WcCvar, RiskError> {
    wc_cvar_quadratic_with(loss, ms, eps, &SolverOptions::default())
}

pub fn wc_cvar_quadratic_with(
    loss: &QuadraticLoss,
    ms: &MomentSet,
    eps: RiskLevel,
    options: &SolverOptions,
) -> Result<WcCvar, RiskError> {
    let n = ms.dim();
    if loss.dim() != n {
        return Err(RiskError::DimensionMismatch {
            context: "loss",
            expected: n,
            got: loss.dim(),
        });
    }
    let q = n + 1;

    // Whitened coordinates ξ = μ + Σ^{1/2}u: the ambiguity set maps onto
    // 𝒫(0, I), the value is unchanged, and Ω becomes the identity — which
    // keeps the cone program well-scaled for near-singular covariances.
    let root = linalg::sym_sqrt(ms.covariance());
    let mu = ms.mean();
    let quad_u = &root * loss.quad() * &root;
    let lin_u = &root * (loss.quad() * mu + loss.lin());
    let const_u = linalg::quad_form(loss.quad(), mu) + 2.0 * loss.lin().dot(mu) + loss.constant();
    let white = QuadraticLoss::new(quad_u, lin_u, const_u)?;

    let mut prog = ConicProgram::new();
    let beta = prog.add_var();
    prog.add_objective(beta, 1.0);
    let nv = prog.add_psd_var(q);

    // (1/ε)·Tr(N) with Ω = I: only diagonal triangle entries contribute.
    let inv_eps = 1.0 / eps.value();
    for i in 0..q {
        prog.add_objective(nv.entry(i, i), inv_eps);
    }

    // N - [[Π, θ],[θᵀ, ρ−β]] ⪰ 0 in whitened coordinates.
    let mut gap = nv.affine();
    gap.constant -= white.lifted();
    let mut corner = DMatrix::zeros(q, q);
    corner[(n, n)] = 1.0;
    gap.push(beta, corner);
    prog.require_psd(&gap);

    let sol = prog.solve(options)?;
    match sol.report.status {
        SolveStatus::Optimal => Ok(WcCvar {
            value: sol.report.objective,
            beta: sol.x[beta],
            report: sol.report,
        }),
        SolveStatus::Unbounded => Err(RiskError::Unbounded),
        status => Err(RiskError::SolverFailure {
            status,
            residual: sol.report.primal_residual,
        }),
    }
}

/// Risk-aware QC membership test: true iff WC-CVaR of the loss is ≤ `tol_feas`.
pub fn wc_cvar_quadratic_sign(
    loss: &QuadraticLoss,
    ms: &MomentSet,
    eps: RiskLevel,
    tol_feas: f64,
) -> Result<bool, RiskError> {
    Ok(wc_cvar_quadratic(loss, ms, eps)?.value <= tol_feas)
}

/// Exact CVaR of an empirical sample at level ε.
///
/// Minimizes β + (1/(εN))·Σ(sᵢ − β)⁺ in closed form: the minimizer is the
/// ⌈εN⌉-th largest sample, which weights the fractional tail sample
/// correctly (this is not the biased "mean of ⌈εN⌉ worst" variant).
pub fn empirical_cvar(samples: &[f64], eps: RiskLevel) -> Result<f64, RiskError> {
    if samples.is_empty() {
        return Err(RiskError::EmptyInput);
    }
    let n = samples.len();
    let k = eps.value() * n as f64;
    let rank = (k.ceil() as usize).clamp(1, n); // 1-based rank of β* from the top
    let mut sorted: Vec<f64> = samples.to_vec();
    sorted.sort_by(|a, b| f64::total_cmp(b, a)); // descending
    let beta = sorted[rank - 1];
    let tail: f64 = sorted[..rank - 1].iter().map(|s| s - beta).sum();
    Ok(beta + tail / k)
}

/// Deltas probing the coherence axioms of the WC-CVaR value.
#[derive(Debug, Clone)]
pub struct CoherenceReport {
    pub base_value: f64,
    /// |value(L + c) − value(L) − c| at c = 5.
    pub translation_error: f64,
    /// |value(a·L) − a·value(L)| at a = 2.
    pub homogeneity_error: f64,
    /// value(L + D) − value(L) for the PSD nonnegative loss D(ξ) = ξᵀξ;
    /// monotonicity requires this to be ≥ 0 up to solver tolerance.
    pub monotonicity_margin: f64,
}

impl CoherenceReport {
    pub fn passes(&self, tol_affine: f64, tol_monotone: f64) -> bool {
        self.translation_error <= tol_affine
            && self.homogeneity_error <= tol_affine
            && self.monotonicity_margin >= -tol_monotone
    }
}

/// Checks translation covariance, positive homogeneity, and monotonicity of
/// the WC-CVaR optimum by re-solving perturbed programs.
pub fn coherence_checks(
    loss: &QuadraticLoss,
    ms: &MomentSet,
    eps: RiskLevel,
) -> Result<CoherenceReport, RiskError> {
    let base = wc_cvar_quadratic(loss, ms, eps)?.value;

    let shift = 5.0;
    let shifted = wc_cvar_quadratic(&loss.shifted(shift), ms, eps)?.value;
    let scale = 2.0;
    let scaled = wc_cvar_quadratic(&loss.scaled(scale), ms, eps)?.value;
    let bump = QuadraticLoss::pure_quadratic(DMatrix::identity(ms.dim(), ms.dim()))?;
    let bumped = wc_cvar_quadratic(&loss.plus(&bump)?, ms, eps)?.value;

    Ok(CoherenceReport {
        base_value: base,
        translation_error: (shifted - base - shift).abs(),
        homogeneity_error: (scaled - scale * base).abs(),
        monotonicity_margin: bumped - base,
    })
}
