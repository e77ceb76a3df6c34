//! Quadratic-constraint builders for the three QC families.
//!
//! - Input QCs: symmetric matrices P whose negated lifted form has
//!   nonpositive WC-CVaR, encoding a risk-bounded input set (ellipsoid,
//!   halfspace, polytope face).
//! - Activation QCs: matrices Q with [z; φ(z); 1]ᵀQ[z; φ(z); 1] ≥ 0 for all
//!   z, assembled from ReLU multipliers.
//! - Safety QCs: matrices S acting on [x; f(x); 1] describing the output
//!   specification (ellipsoid, margin, classification).

use crate::linalg;
use crate::risk::{self, MomentSet, QuadraticLoss, RiskError, RiskLevel};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QcError {
    #[error("covariance is singular; cannot build the risk ellipsoid")]
    SingularCovariance,
    #[error("halfspace normal is zero")]
    ZeroNormal,
    #[error("polytope face list is empty")]
    EmptyPolytope,
    #[error("multiplier {name}[{index}] = {value} violates its sign constraint")]
    NegativeMultiplier {
        name: &'static str,
        index: usize,
        value: f64,
    },
    #[error("class index {class} out of range for {count} classes")]
    InvalidClassIndex { class: usize, count: usize },
    #[error("safety shape matrix is not positive definite")]
    SingularShape,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Risk(#[from] RiskError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputGeometry {
    Ellipsoid,
    PolytopeFace,
    Hyperplane,
    Custom,
}

/// Risk-aware input QC: symmetric P on [x; 1]. Membership in the admissible
/// family means WC-CVaR of the negated form is ≤ 0, which is a semantic
/// property checked against a moment set, not a structural one.
#[derive(Debug, Clone)]
pub struct InputQc {
    p: DMatrix<f64>,
    geometry: InputGeometry,
}

impl InputQc {
    pub fn from_matrix(p: DMatrix<f64>, geometry: InputGeometry) -> Result<Self, QcError> {
        if p.nrows() != p.ncols() {
            return Err(QcError::Dimension(format!(
                "input QC matrix must be square, got {}x{}",
                p.nrows(),
                p.ncols()
            )));
        }
        Ok(InputQc {
            p: linalg::symmetrize(&p),
            geometry,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn geometry(&self) -> InputGeometry {
        self.geometry
    }

    /// Input dimension n (P is (n+1)×(n+1)).
    pub fn dim(&self) -> usize {
        self.p.nrows() - 1
    }

    /// The loss −[x; 1]ᵀP[x; 1] whose WC-CVaR must be ≤ 0 for the QC to hold.
    pub fn loss(&self) -> QuadraticLoss {
        QuadraticLoss::from_lifted(&(-&self.p)).expect("lifted P is square")
    }

    /// Risk-aware membership test against a moment set.
    pub fn check(&self, ms: &MomentSet, eps: RiskLevel, tol_feas: f64) -> Result<bool, QcError> {
        Ok(risk::wc_cvar_quadratic_sign(
            &self.loss(),
            ms,
            eps,
            tol_feas,
        )?)
    }
}

/// Tight risk-aware ellipsoid {x : (x−μ)ᵀΣ⁻¹(x−μ) ≤ n/ε} as an input QC:
///
/// ```text
///     P = [[−Σ⁻¹, Σ⁻¹μ],[μᵀΣ⁻¹, n/ε − μᵀΣ⁻¹μ]]
/// ```
///
/// Its negated form has WC-CVaR exactly 0 (it sits on the risk boundary).
pub fn input_qc_ellipsoid(ms: &MomentSet, eps: RiskLevel) -> Result<InputQc, QcError> {
    let n = ms.dim();
    let sig_inv = ms
        .inverse_covariance()
        .map_err(|_| QcError::SingularCovariance)?;
    let mu = ms.mean();
    let radius = n as f64 / eps.value();
    let mut p = DMatrix::zeros(n + 1, n + 1);
    p.view_mut((0, 0), (n, n)).copy_from(&(-&sig_inv));
    let cross = &sig_inv * mu;
    p.view_mut((0, n), (n, 1)).copy_from(&cross);
    p.view_mut((n, 0), (1, n)).copy_from(&cross.transpose());
    p[(n, n)] = radius - (mu.transpose() * &sig_inv * mu)[(0, 0)];
    InputQc::from_matrix(p, InputGeometry::Ellipsoid)
}

/// Confidence-ellipsoid input set at level p: {x : (x−μ)ᵀΣ⁻¹(x−μ) ≤ n/(1−p)}.
/// Identical to the risk-aware ellipsoid at ε = 1 − p, which is exactly the
/// equivalence exploited by the reachability experiments.
pub fn input_qc_confidence(ms: &MomentSet, p_level: f64) -> Result<InputQc, QcError> {
    let eps = RiskLevel::new(1.0 - p_level)?;
    input_qc_ellipsoid(ms, eps)
}

/// Closed-form WC-CVaR of the affine loss aᵀx − b over 𝒫(μ, Σ):
/// aᵀμ + sqrt((1−ε)/ε)·sqrt(aᵀΣa) − b.
pub fn wc_cvar_affine_closed_form(
    a: &DVector<f64>,
    b: f64,
    ms: &MomentSet,
    eps: RiskLevel,
) -> f64 {
    let mean = a.dot(ms.mean());
    let var = (a.transpose() * ms.covariance() * a)[(0, 0)].max(0.0);
    let e = eps.value();
    mean + ((1.0 - e) / e).sqrt() * var.sqrt() - b
}

/// Halfspace input QC aᵀx ≤ b lifted to [x; 1] with zero quadratic block,
/// together with its risk margin (closed-form WC-CVaR of aᵀx − b).
#[derive(Debug, Clone)]
pub struct HalfspaceQc {
    pub qc: InputQc,
    /// WC-CVaR of aᵀx − b; the QC holds iff this is ≤ 0.
    pub margin: f64,
    pub satisfied: bool,
}

pub fn input_qc_halfspace(
    a: &DVector<f64>,
    b: f64,
    ms: &MomentSet,
    eps: RiskLevel,
) -> Result<HalfspaceQc, QcError> {
    if a.amax() == 0.0 {
        return Err(QcError::ZeroNormal);
    }
    if a.len() != ms.dim() {
        return Err(QcError::Dimension(format!(
            "halfspace normal has length {}, moment set has dimension {}",
            a.len(),
            ms.dim()
        )));
    }
    let n = a.len();
    // Loss aᵀx − b as a lifted form: linear slot a/2 so the form is exactly
    // the affine margin; P is its negation.
    let mut p = DMatrix::zeros(n + 1, n + 1);
    let half = a * 0.5;
    p.view_mut((0, n), (n, 1)).copy_from(&(-&half));
    p.view_mut((n, 0), (1, n)).copy_from(&(-half.transpose()));
    p[(n, n)] = b;
    let margin = wc_cvar_affine_closed_form(a, b, ms, eps);
    Ok(HalfspaceQc {
        qc: InputQc::from_matrix(p, InputGeometry::Hyperplane)?,
        margin,
        satisfied: margin <= risk::DEFAULT_TOL_FEAS,
    })
}

/// One QC per polytope face; all must be satisfied for the polytope to be an
/// admissible risk-bounded input description.
pub fn input_qc_polytope(
    faces: &[(DVector<f64>, f64)],
    ms: &MomentSet,
    eps: RiskLevel,
) -> Result<Vec<HalfspaceQc>, QcError> {
    if faces.is_empty() {
        return Err(QcError::EmptyPolytope);
    }
    faces
        .iter()
        .map(|(a, b)| {
            let mut qc = input_qc_halfspace(a, *b, ms, eps)?;
            qc.qc.geometry = InputGeometry::PolytopeFace;
            Ok(qc)
        })
        .collect()
}

/// ReLU activation multipliers: λ free-sign, pairwise λ_{ij} ≥ 0 (i < j),
/// ν ≥ 0, η ≥ 0.
#[derive(Debug, Clone)]
pub struct ReluMultipliers {
    pub lam: DVector<f64>,
    /// Pairwise repeated-nonlinearity multipliers ((i, j), value), i < j.
    pub lam_pair: Vec<((usize, usize), f64)>,
    pub nu: DVector<f64>,
    pub eta: DVector<f64>,
}

impl ReluMultipliers {
    pub fn new(
        lam: DVector<f64>,
        lam_pair: Vec<((usize, usize), f64)>,
        nu: DVector<f64>,
        eta: DVector<f64>,
    ) -> Result<Self, QcError> {
        let d = lam.len();
        if nu.len() != d || eta.len() != d {
            return Err(QcError::Dimension(format!(
                "multiplier lengths disagree: λ {}, ν {}, η {}",
                d,
                nu.len(),
                eta.len()
            )));
        }
        for (i, &v) in nu.iter().enumerate() {
            if v < 0.0 {
                return Err(QcError::NegativeMultiplier {
                    name: "nu",
                    index: i,
                    value: v,
                });
            }
        }
        for (i, &v) in eta.iter().enumerate() {
            if v < 0.0 {
                return Err(QcError::NegativeMultiplier {
                    name: "eta",
                    index: i,
                    value: v,
                });
            }
        }
        for (idx, &((i, j), v)) in lam_pair.iter().enumerate() {
            if i >= j || j >= d {
                return Err(QcError::Dimension(format!(
                    "pairwise multiplier index ({i}, {j}) invalid for width {d}"
                )));
            }
            if v < 0.0 {
                return Err(QcError::NegativeMultiplier {
                    name: "lambda_pair",
                    index: idx,
                    value: v,
                });
            }
        }
        Ok(ReluMultipliers {
            lam,
            lam_pair,
            nu,
            eta,
        })
    }

    pub fn zeros(d: usize) -> Self {
        ReluMultipliers {
            lam: DVector::zeros(d),
            lam_pair: Vec::new(),
            nu: DVector::zeros(d),
            eta: DVector::zeros(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.lam.len()
    }

    /// T = Σ λᵢ eᵢeᵢᵀ + Σ λ_{ij} (eᵢ−eⱼ)(eᵢ−eⱼ)ᵀ.
    pub fn t_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut t = DMatrix::from_diagonal(&self.lam);
        for &((i, j), v) in &self.lam_pair {
            t[(i, i)] += v;
            t[(j, j)] += v;
            t[(i, j)] -= v;
            t[(j, i)] -= v;
        }
        debug_assert_eq!(t.nrows(), d);
        t
    }

    /// Flat vector [λ; λ_pair; ν; η] for reports.
    pub fn flat(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.lam.iter().copied().collect();
        v.extend(self.lam_pair.iter().map(|&(_, x)| x));
        v.extend(self.nu.iter());
        v.extend(self.eta.iter());
        v
    }
}

/// Activation QC matrix Q on [z; φ(z); 1], (2d+1)×(2d+1).
#[derive(Debug, Clone)]
pub struct ActivationQc {
    q: DMatrix<f64>,
    d: usize,
}

impl ActivationQc {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Evaluates [z; φ(z); 1]ᵀ Q [z; φ(z); 1] at a pre-activation z.
    pub fn form(&self, z: &DVector<f64>) -> f64 {
        let d = self.d;
        let mut v = DVector::zeros(2 * d + 1);
        v.rows_mut(0, d).copy_from(z);
        v.rows_mut(d, d).copy_from(&crate::network::relu(z));
        v[2 * d] = 1.0;
        linalg::quad_form(&self.q, &v)
    }
}

/// Assembles the ReLU QC
///
/// ```text
///     Q = [[0,   T,    −ν ],
///          [Tᵀ, −2T,  ν+η ],
///          [−νᵀ, (ν+η)ᵀ, 0]]
/// ```
///
/// which is nonnegative on every (z, φ(z)) pair by ReLU complementarity,
/// φ ≥ z, and φ ≥ 0.
pub fn relu_qc(mult: &ReluMultipliers) -> ActivationQc {
    let d = mult.dim();
    let t = mult.t_matrix();
    let mut q = DMatrix::zeros(2 * d + 1, 2 * d + 1);
    q.view_mut((0, d), (d, d)).copy_from(&t);
    q.view_mut((d, 0), (d, d)).copy_from(&t.transpose());
    q.view_mut((d, d), (d, d)).copy_from(&(-2.0 * &t));
    let nu_col = -&mult.nu;
    q.view_mut((0, 2 * d), (d, 1)).copy_from(&nu_col);
    q.view_mut((2 * d, 0), (1, d)).copy_from(&nu_col.transpose());
    let ne = &mult.nu + &mult.eta;
    q.view_mut((d, 2 * d), (d, 1)).copy_from(&ne);
    q.view_mut((2 * d, d), (1, d)).copy_from(&ne.transpose());
    ActivationQc { q, d }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SafetyProvenance {
    Ellipsoid,
    PolytopeMargin,
    Classification { class: usize, count: usize },
    Custom,
}

/// Output safety QC: symmetric S on [x; f(x); 1].
#[derive(Debug, Clone)]
pub struct SafetyQc {
    s: DMatrix<f64>,
    input_dim: usize,
    output_dim: usize,
    provenance: SafetyProvenance,
}

impl SafetyQc {
    pub fn from_matrix(
        s: DMatrix<f64>,
        input_dim: usize,
        output_dim: usize,
        provenance: SafetyProvenance,
    ) -> Result<Self, QcError> {
        let expect = input_dim + output_dim + 1;
        if s.nrows() != expect || s.ncols() != expect {
            return Err(QcError::Dimension(format!(
                "safety QC must be {expect}x{expect} for n = {input_dim}, m = {output_dim}; got {}x{}",
                s.nrows(),
                s.ncols()
            )));
        }
        Ok(SafetyQc {
            s: linalg::symmetrize(&s),
            input_dim,
            output_dim,
            provenance,
        })
    }

    /// Constant-form specification [x; f; 1]ᵀS[x; f; 1] = c (corner entry c).
    pub fn constant(c: f64, input_dim: usize, output_dim: usize) -> Self {
        let dim = input_dim + output_dim + 1;
        let mut s = DMatrix::zeros(dim, dim);
        s[(dim - 1, dim - 1)] = c;
        SafetyQc {
            s,
            input_dim,
            output_dim,
            provenance: SafetyProvenance::Custom,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn provenance(&self) -> &SafetyProvenance {
        &self.provenance
    }

    /// Evaluates [x; f; 1]ᵀ S [x; f; 1].
    pub fn evaluate(&self, x: &DVector<f64>, f: &DVector<f64>) -> f64 {
        let mut v = DVector::zeros(self.input_dim + self.output_dim + 1);
        v.rows_mut(0, self.input_dim).copy_from(x);
        v.rows_mut(self.input_dim, self.output_dim).copy_from(f);
        v[self.input_dim + self.output_dim] = 1.0;
        linalg::quad_form(&self.s, &v)
    }
}

/// Ellipsoidal safety QC for y = C[x; f]: S = [[CᵀE⁻¹C, 0],[0, −1]], so the
/// lifted form equals yᵀE⁻¹y − 1.
pub fn safety_qc_ellipsoid(
    e: &DMatrix<f64>,
    c: &DMatrix<f64>,
    input_dim: usize,
) -> Result<SafetyQc, QcError> {
    let e_inv = linalg::spd_inverse(e).ok_or(QcError::SingularShape)?;
    if c.nrows() != e.nrows() {
        return Err(QcError::Dimension(format!(
            "output map has {} rows but shape matrix is {}x{}",
            c.nrows(),
            e.nrows(),
            e.ncols()
        )));
    }
    if c.ncols() < input_dim {
        return Err(QcError::Dimension(format!(
            "output map has {} columns, fewer than the input dimension {input_dim}",
            c.ncols()
        )));
    }
    let output_dim = c.ncols() - input_dim;
    let dim = c.ncols() + 1;
    let mut s = DMatrix::zeros(dim, dim);
    s.view_mut((0, 0), (c.ncols(), c.ncols()))
        .copy_from(&(c.transpose() * &e_inv * c));
    s[(dim - 1, dim - 1)] = -1.0;
    SafetyQc::from_matrix(s, input_dim, output_dim, SafetyProvenance::Ellipsoid)
}

/// Affine margin safety QC: the lifted form equals aᵀ[x; f] − b, so the
/// risk-aware spec bounds the WC-CVaR of that margin by zero.
pub fn safety_qc_halfspace(
    a: &DVector<f64>,
    b: f64,
    input_dim: usize,
) -> Result<SafetyQc, QcError> {
    if a.amax() == 0.0 {
        return Err(QcError::ZeroNormal);
    }
    if a.len() < input_dim {
        return Err(QcError::Dimension(format!(
            "margin normal has length {}, shorter than the input dimension {input_dim}",
            a.len()
        )));
    }
    let output_dim = a.len() - input_dim;
    let dim = a.len() + 1;
    let mut s = DMatrix::zeros(dim, dim);
    let half = a * 0.5;
    s.view_mut((0, dim - 1), (a.len(), 1)).copy_from(&half);
    s.view_mut((dim - 1, 0), (1, a.len()))
        .copy_from(&half.transpose());
    s[(dim - 1, dim - 1)] = -b;
    SafetyQc::from_matrix(s, input_dim, output_dim, SafetyProvenance::PolytopeMargin)
}

/// Classification safety QCs for class c among m classes.
#[derive(Debug, Clone)]
pub enum ClassificationQc {
    /// One margin QC per competitor i ≠ c, each encoding the affine loss
    /// f_i(x) − f_c(x); the class is risk-aware iff every margin's WC-CVaR
    /// is ≤ 0.
    PerHyperplane(Vec<SafetyQc>),
    /// The coupled polytopic structure S = blkdiag(0, S_subᵀ Γ S_sub, 0)
    /// parameterized by entrywise-nonnegative Γ with zero diagonal; Γ is
    /// left to the verifier as a decision variable.
    Coupled(CoupledClassificationQc),
}

#[derive(Debug, Clone)]
pub struct CoupledClassificationQc {
    /// S_sub ∈ ℝ^{m×m}: row 0 zero, row i maps f ↦ f_c − f_{σ(i)}.
    pub s_sub: DMatrix<f64>,
    pub class: usize,
    pub count: usize,
    pub input_dim: usize,
}

impl CoupledClassificationQc {
    /// The lifted S for a concrete Γ (symmetric, nonnegative, zero diagonal).
    pub fn s_of_gamma(&self, gamma: &DMatrix<f64>) -> Result<SafetyQc, QcError> {
        let m = self.count;
        if gamma.nrows() != m || gamma.ncols() != m {
            return Err(QcError::Dimension(format!(
                "Γ must be {m}x{m}, got {}x{}",
                gamma.nrows(),
                gamma.ncols()
            )));
        }
        let middle = self.s_sub.transpose() * gamma * &self.s_sub;
        let n = self.input_dim;
        let dim = n + m + 1;
        let mut s = DMatrix::zeros(dim, dim);
        s.view_mut((n, n), (m, m)).copy_from(&middle);
        SafetyQc::from_matrix(
            s,
            n,
            m,
            SafetyProvenance::Classification {
                class: self.class,
                count: m,
            },
        )
    }

    /// Basis matrices ∂S/∂Γ_{ij} for i < j, used by the verifier.
    pub fn gamma_basis(&self) -> Vec<((usize, usize), DMatrix<f64>)> {
        let m = self.count;
        let n = self.input_dim;
        let dim = n + m + 1;
        let mut out = Vec::new();
        for i in 0..m {
            for j in (i + 1)..m {
                let mut g = DMatrix::zeros(m, m);
                g[(i, j)] = 1.0;
                g[(j, i)] = 1.0;
                let middle = self.s_sub.transpose() * g * &self.s_sub;
                let mut s = DMatrix::zeros(dim, dim);
                s.view_mut((n, n), (m, m)).copy_from(&middle);
                out.push(((i, j), s));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassificationMode {
    PerHyperplane,
    Coupled,
}

/// Builds the classification safety QC(s) for class `class` among `count`
/// classes on a network with `input_dim` inputs.
///
/// Per-hyperplane mode returns one margin QC per competitor, each encoding
/// the loss f_i − f_c (a competitor overtaking the labelled class). Coupled
/// mode returns the polytopic structure with Γ as a free parameter.
pub fn classification_qc(
    class: usize,
    count: usize,
    input_dim: usize,
    mode: ClassificationMode,
) -> Result<ClassificationQc, QcError> {
    if count < 2 || class >= count {
        return Err(QcError::InvalidClassIndex { class, count });
    }
    match mode {
        ClassificationMode::PerHyperplane => {
            let mut qcs = Vec::with_capacity(count - 1);
            let dim = input_dim + count + 1;
            for i in (0..count).filter(|&i| i != class) {
                let mut s = DMatrix::zeros(dim, dim);
                // Linear slot a/2 with a = e_i − e_c so the form is f_i − f_c.
                s[(input_dim + i, dim - 1)] = 0.5;
                s[(dim - 1, input_dim + i)] = 0.5;
                s[(input_dim + class, dim - 1)] = -0.5;
                s[(dim - 1, input_dim + class)] = -0.5;
                qcs.push(SafetyQc::from_matrix(
                    s,
                    input_dim,
                    count,
                    SafetyProvenance::Classification { class, count },
                )?);
            }
            Ok(ClassificationQc::PerHyperplane(qcs))
        }
        ClassificationMode::Coupled => {
            let mut s_sub = DMatrix::zeros(count, count);
            let mut row = 1;
            for i in (0..count).filter(|&i| i != class) {
                s_sub[(row, class)] = 1.0;
                s_sub[(row, i)] = -1.0;
                row += 1;
            }
            Ok(ClassificationQc::Coupled(CoupledClassificationQc {
                s_sub,
                class,
                count,
                input_dim,
            }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk::DEFAULT_TOL_FEAS;
    use nalgebra::{dmatrix, dvector};
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn eps(e: f64) -> RiskLevel {
        RiskLevel::new(e).unwrap()
    }

    #[test]
    fn ellipsoid_qc_matches_case3_radius() {
        // Σ = I/4, ε = 0.5: the risk ellipsoid is the unit disk, matching the
        // norm-bounded case r = 1 at this level.
        let ms = MomentSet::centered(DMatrix::identity(2, 2) * 0.25).unwrap();
        let qc = input_qc_ellipsoid(&ms, eps(0.5)).unwrap();
        let p = qc.matrix();
        // {x : xᵀ(4I)x ≤ 4} = {‖x‖² ≤ 1}: radius² = corner / quad scale.
        let radius_sq = p[(2, 2)] / -p[(0, 0)];
        assert!((radius_sq - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ellipsoid_qc_radius_n_over_eps() {
        let ms = MomentSet::centered(DMatrix::identity(2, 2)).unwrap();
        let qc = input_qc_ellipsoid(&ms, eps(0.2)).unwrap();
        let p = qc.matrix();
        assert!((p[(2, 2)] - 10.0).abs() < 1e-9);
        assert!((p[(0, 0)] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn ellipsoid_qc_sits_on_risk_boundary() {
        let ms = MomentSet::new(
            dvector![0.5, -0.2],
            dmatrix![0.3, 0.1; 0.1, 0.6],
        )
        .unwrap();
        for e in [0.2, 0.5, 0.8] {
            let qc = input_qc_ellipsoid(&ms, eps(e)).unwrap();
            let v = risk::wc_cvar_quadratic(&qc.loss(), &ms, eps(e)).unwrap();
            assert!(v.value.abs() < 1e-6, "eps {e}: value {}", v.value);
            assert!(qc.check(&ms, eps(e), 1e-6).unwrap());
        }
    }

    #[test]
    fn confidence_equals_risk_at_complementary_level() {
        let ms = MomentSet::centered(dmatrix![0.5, 0.0; 0.0, 0.25]).unwrap();
        for e in [0.1, 0.5, 0.9] {
            let risk_qc = input_qc_ellipsoid(&ms, eps(e)).unwrap();
            let conf_qc = input_qc_confidence(&ms, 1.0 - e).unwrap();
            // 1 − (1 − ε) differs from ε by at most one ulp.
            assert!((risk_qc.matrix() - conf_qc.matrix()).amax() < 1e-12);
        }
    }

    #[test]
    fn halfspace_margins() {
        let ms = MomentSet::centered(DMatrix::identity(2, 2)).unwrap();
        // Far-away face: margin = sqrt((1-ε)/ε) − 10 = 1 − 10 at ε = 0.5.
        let qc = input_qc_halfspace(&dvector![1.0, 0.0], 10.0, &ms, eps(0.5)).unwrap();
        assert!((qc.margin + 9.0).abs() < 1e-12);
        assert!(qc.satisfied);
        // Face through the mean is always violated.
        let qc = input_qc_halfspace(&dvector![1.0, 0.0], 0.0, &ms, eps(0.5)).unwrap();
        assert!((qc.margin - 1.0).abs() < 1e-12);
        assert!(!qc.satisfied);
    }

    #[test]
    fn halfspace_closed_form_matches_sdp() {
        let ms = MomentSet::new(
            dvector![0.4, -0.3],
            dmatrix![0.7, 0.2; 0.2, 0.9],
        )
        .unwrap();
        let a = dvector![1.5, -0.5];
        for (b, e) in [(2.0, 0.3), (0.5, 0.7), (-1.0, 0.15)] {
            let closed = wc_cvar_affine_closed_form(&a, b, &ms, eps(e));
            let qc = input_qc_halfspace(&a, b, &ms, eps(e)).unwrap();
            let sdp = risk::wc_cvar_quadratic(&qc.qc.loss(), &ms, eps(e)).unwrap();
            assert!(
                (closed - sdp.value).abs() < 1e-6,
                "b {b} e {e}: closed {closed} sdp {}",
                sdp.value
            );
        }
    }

    #[test]
    fn polytope_faces_and_containment() {
        // Box |x_i| <= 3 around a small covariance: every face holds, and the
        // linear QCs hold exactly when the (1−ε)/ε-scaled ellipsoid fits.
        let ms = MomentSet::centered(DMatrix::identity(2, 2) * 0.25).unwrap();
        let e = 0.2;
        let faces = vec![
            (dvector![1.0, 0.0], 3.0),
            (dvector![-1.0, 0.0], 3.0),
            (dvector![0.0, 1.0], 3.0),
            (dvector![0.0, -1.0], 3.0),
        ];
        let qcs = input_qc_polytope(&faces, &ms, eps(e)).unwrap();
        assert!(qcs.iter().all(|q| q.satisfied));
        // Geometric cross-check: support of the ellipsoid {xᵀΣ⁻¹x ≤ k} with
        // k = (1−ε)/ε along each face normal stays below the offset.
        let k: f64 = (1.0 - e) / e;
        for (a, b) in &faces {
            let support = (k * (a.transpose() * ms.covariance() * a)[(0, 0)]).sqrt();
            let margin_sign = support <= *b;
            let qc = input_qc_halfspace(a, *b, &ms, eps(e)).unwrap();
            assert_eq!(qc.satisfied, margin_sign);
        }
        // Shrinking the box below the ellipsoid support flips the result.
        let tight = (k * 0.25_f64).sqrt() * 0.99;
        let qc = input_qc_halfspace(&dvector![1.0, 0.0], tight, &ms, eps(e)).unwrap();
        assert!(!qc.satisfied);
    }

    #[test]
    fn degenerate_face_rejected() {
        let ms = MomentSet::centered(DMatrix::identity(2, 2)).unwrap();
        assert!(matches!(
            input_qc_halfspace(&dvector![0.0, 0.0], -1.0, &ms, eps(0.5)),
            Err(QcError::ZeroNormal)
        ));
        assert!(matches!(
            input_qc_polytope(&[], &ms, eps(0.5)),
            Err(QcError::EmptyPolytope)
        ));
    }

    #[test]
    fn relu_qc_complementarity_is_exact() {
        // d = 1, λ = 1: form = 2zφ − 2φ² = 0 for every z.
        let mult = ReluMultipliers::new(
            dvector![1.0],
            vec![],
            dvector![0.0],
            dvector![0.0],
        )
        .unwrap();
        let qc = relu_qc(&mult);
        for z in [-10.0, -1.0, -1e-8, 0.0, 1e-8, 2.5, 10.0] {
            let v = qc.form(&dvector![z]);
            assert!(v.abs() < 1e-12, "z {z}: form {v}");
        }
    }

    #[test]
    fn relu_qc_nu_gives_phi_minus_z() {
        let mult = ReluMultipliers::new(
            dvector![0.0],
            vec![],
            dvector![1.0],
            dvector![0.0],
        )
        .unwrap();
        let qc = relu_qc(&mult);
        for z in [-3.0, -0.5, 0.0, 0.5, 3.0] {
            let v = qc.form(&dvector![z]);
            let expect = 2.0 * ((z.max(0.0)) - z);
            assert!((v - expect).abs() < 1e-12, "z {z}");
        }
    }

    #[test]
    fn relu_qc_random_multipliers_nonnegative() {
        let mut rng = ChaCha12Rng::seed_from_u64(2024);
        for d in [1usize, 2, 5, 10] {
            for _ in 0..200 {
                let lam = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
                let nu = DVector::from_fn(d, |_, _| rng.random_range(0.0..1.0));
                let eta = DVector::from_fn(d, |_, _| rng.random_range(0.0..1.0));
                let mut pairs = Vec::new();
                for i in 0..d {
                    for j in (i + 1)..d {
                        if rng.random_bool(0.3) {
                            pairs.push(((i, j), rng.random_range(0.0..1.0)));
                        }
                    }
                }
                let qc = relu_qc(&ReluMultipliers::new(lam, pairs, nu, eta).unwrap());
                for _ in 0..50 {
                    let z = DVector::from_fn(d, |_, _| rng.random_range(-10.0..10.0));
                    let v = qc.form(&z);
                    assert!(v >= -1e-9, "d {d}: form {v}");
                }
            }
        }
    }

    #[test]
    fn negative_multiplier_rejected() {
        let err = ReluMultipliers::new(
            dvector![0.0],
            vec![],
            dvector![-0.1],
            dvector![0.0],
        )
        .unwrap_err();
        assert!(matches!(err, QcError::NegativeMultiplier { name: "nu", .. }));
    }

    #[test]
    fn safety_ellipsoid_unit_shape() {
        // E = I, C = [0 | I]: form = ‖f‖² − 1.
        let c = DMatrix::from_row_slice(2, 4, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let s = safety_qc_ellipsoid(&DMatrix::identity(2, 2), &c, 2).unwrap();
        let v = s.evaluate(&dvector![5.0, -7.0], &dvector![0.6, 0.8]);
        assert!((v - 0.0).abs() < 1e-12);
        let v = s.evaluate(&dvector![0.0, 0.0], &dvector![2.0, 0.0]);
        assert!((v - 3.0).abs() < 1e-12);
    }

    #[test]
    fn safety_ellipsoid_scaling() {
        let c = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let e1 = safety_qc_ellipsoid(&DMatrix::identity(1, 1), &c, 1).unwrap();
        let e4 = safety_qc_ellipsoid(&(DMatrix::identity(1, 1) * 4.0), &c, 1).unwrap();
        assert!((e1.matrix()[(1, 1)] - 4.0 * e4.matrix()[(1, 1)]).abs() < 1e-12);
    }

    #[test]
    fn safety_ellipsoid_pointwise_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for _ in 0..50 {
            let raw = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
            let e = &raw * raw.transpose() + DMatrix::identity(2, 2) * 0.5;
            let c = DMatrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0));
            let s = safety_qc_ellipsoid(&e, &c, 1).unwrap();
            let x = dvector![rng.random_range(-2.0..2.0)];
            let f = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            let mut xf = DVector::zeros(3);
            xf.rows_mut(0, 1).copy_from(&x);
            xf.rows_mut(1, 2).copy_from(&f);
            let y = &c * &xf;
            let direct = (y.transpose() * crate::linalg::spd_inverse(&e).unwrap() * &y)[(0, 0)] - 1.0;
            let lifted = s.evaluate(&x, &f);
            assert!((direct - lifted).abs() < 1e-12);
        }
    }

    #[test]
    fn safety_halfspace_form() {
        let s = safety_qc_halfspace(&dvector![1.0, 0.0, -2.0], 0.5, 2).unwrap();
        let v = s.evaluate(&dvector![3.0, 7.0], &dvector![1.25]);
        assert!((v - (3.0 - 2.5 - 0.5)).abs() < 1e-12);
        assert!(matches!(
            safety_qc_halfspace(&dvector![0.0, 0.0], 1.0, 1),
            Err(QcError::ZeroNormal)
        ));
    }

    #[test]
    fn classification_per_hyperplane_margins() {
        let qc = classification_qc(0, 3, 2, ClassificationMode::PerHyperplane).unwrap();
        let ClassificationQc::PerHyperplane(qcs) = qc else {
            panic!("expected per-hyperplane")
        };
        assert_eq!(qcs.len(), 2);
        let x = dvector![0.0, 0.0];
        let f = dvector![5.0, 1.0, 1.0];
        let margins: Vec<f64> = qcs.iter().map(|s| s.evaluate(&x, &f)).collect();
        assert_eq!(margins, vec![-4.0, -4.0]);
    }

    #[test]
    fn classification_coupled_structure() {
        let qc = classification_qc(0, 3, 2, ClassificationMode::Coupled).unwrap();
        let ClassificationQc::Coupled(coupled) = qc else {
            panic!("expected coupled")
        };
        let expect = dmatrix![
            0.0, 0.0, 0.0;
            1.0, -1.0, 0.0;
            1.0, 0.0, -1.0
        ];
        assert_eq!(coupled.s_sub, expect);
        // The Γ-parameterized S is zero outside the f-block.
        let gamma = dmatrix![0.0, 1.0, 0.5; 1.0, 0.0, 0.2; 0.5, 0.2, 0.0];
        let s = coupled.s_of_gamma(&gamma).unwrap();
        assert_eq!(s.matrix().nrows(), 6);
        for j in 0..6 {
            assert_eq!(s.matrix()[(0, j)], 0.0);
            assert_eq!(s.matrix()[(5, j)], 0.0);
        }
    }

    #[test]
    fn classification_bad_class_rejected() {
        assert!(matches!(
            classification_qc(3, 3, 2, ClassificationMode::PerHyperplane),
            Err(QcError::InvalidClassIndex { .. })
        ));
        assert!(matches!(
            classification_qc(0, 1, 2, ClassificationMode::PerHyperplane),
            Err(QcError::InvalidClassIndex { .. })
        ));
    }

    #[test]
    fn custom_input_qc_check_runs_the_sdp() {
        // Constant −1 form is always admissible; +1 never is.
        let ms = MomentSet::centered(DMatrix::identity(2, 2)).unwrap();
        let mut p = DMatrix::zeros(3, 3);
        p[(2, 2)] = 1.0; // form −1 after negation
        let qc = InputQc::from_matrix(p.clone(), InputGeometry::Custom).unwrap();
        assert!(qc.check(&ms, eps(0.4), DEFAULT_TOL_FEAS).unwrap());
        let qc = InputQc::from_matrix(-p, InputGeometry::Custom).unwrap();
        assert!(!qc.check(&ms, eps(0.4), DEFAULT_TOL_FEAS).unwrap());
    }
}
