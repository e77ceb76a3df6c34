//! Lifted LMI assembly, the safety-certificate search, and minimum-volume
//! ellipsoidal safe sets.
//!
//! Everything is posed over the lifted vector 𝐱̄ = [x⁰; …; x^ℓ; 1]. The
//! sufficient condition for the risk-aware safety spec S is the LMI
//!
//! ```text
//!     M_in(P) + M_mid(Q) + M_out(S) ⪯ 0
//! ```
//!
//! searched over activation multipliers (and a nonnegative scaling of the
//! input QC, which is sound because the admissible input family is a cone).
//! Feasibility is solved with an explicit slack: minimize t subject to
//! M_sum ⪯ t·I, certifying when t stays below `tol_psd`. The condition is
//! sufficient only, so an infeasible search yields `Undetermined`, never
//! "unsafe".

use crate::linalg;
use crate::network::{CompactForm, Network};
use crate::qc::{self, ActivationQc, CoupledClassificationQc, InputQc, QcError, ReluMultipliers, SafetyQc};
use crate::risk::{self, MomentSet, RiskError, RiskLevel};
use crate::sdp::{AffineMat, ConicProgram, LinExpr, SdpError, SolveStatus, SolverOptions, SolverReport, VarId};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VerifierError {
    #[error("dimension mismatch in {block}: expected {expected}, got {got}")]
    DimensionMismatch {
        block: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("input QC fails the risk-aware membership test (WC-CVaR = {value:.6e} > {tol:.1e})")]
    InputQcViolated { value: f64, tol: f64 },
    #[error("no certifiable ellipsoid: the output is risk-unbounded under this input QC")]
    Unbounded,
    #[error("solver stopped with status {status:?}")]
    Solver { status: SolveStatus },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Qc(#[from] QcError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
}

/// Options shared by `verify` and `min_volume_ellipsoid`.
#[derive(Debug, Clone)]
pub struct VerifyOptions {
    /// Certification threshold on the LMI slack.
    pub tol_psd: f64,
    /// Feasibility tolerance for the input-QC membership pre-check.
    pub tol_feas: f64,
    /// Include pairwise repeated-nonlinearity multipliers λ_{ij} (O(d²)).
    pub pairwise_multipliers: bool,
    /// Search a nonnegative scaling τ of the input QC alongside Q. The
    /// admissible family is a cone, so τP stays admissible.
    pub scale_input: bool,
    pub solver: SolverOptions,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            tol_psd: 1e-8,
            tol_feas: risk::DEFAULT_TOL_FEAS,
            pairwise_multipliers: false,
            scale_input: true,
            solver: SolverOptions::default(),
        }
    }
}

/// The three lifted blocks of the safety LMI for concrete (P, Q, S).
#[derive(Debug, Clone)]
pub struct LiftedLmi {
    pub m_in: DMatrix<f64>,
    pub m_mid: DMatrix<f64>,
    pub m_out: DMatrix<f64>,
    pub lifted_dim: usize,
}

impl LiftedLmi {
    pub fn sum(&self) -> DMatrix<f64> {
        &self.m_in + &self.m_mid + &self.m_out
    }
}

/// [[E⁰, 0],[0, 1]] ∈ ℝ^{(n+1)×n̄}.
fn in_stack(cf: &CompactForm) -> DMatrix<f64> {
    let n = cf.input_dim();
    let nb = cf.lifted_dim;
    let mut st = DMatrix::zeros(n + 1, nb);
    st.view_mut((0, 0), (n, cf.stacked_dim))
        .copy_from(cf.selector_for(0));
    st[(n, nb - 1)] = 1.0;
    st
}

/// [[𝐀, 𝐛],[𝐁, 0],[0, 1]] ∈ ℝ^{(2d+1)×n̄}.
fn mid_stack(cf: &CompactForm) -> DMatrix<f64> {
    let d = cf.hidden_dim;
    let s = cf.stacked_dim;
    let nb = cf.lifted_dim;
    let mut st = DMatrix::zeros(2 * d + 1, nb);
    st.view_mut((0, 0), (d, s)).copy_from(&cf.big_a);
    st.view_mut((0, s), (d, 1)).copy_from(&cf.big_b);
    st.view_mut((d, 0), (d, s)).copy_from(&cf.selector);
    st[(2 * d, nb - 1)] = 1.0;
    st
}

/// [[E⁰, 0],[W^ℓE^ℓ, b^ℓ],[0, 1]] ∈ ℝ^{(n+m+1)×n̄}.
fn out_stack(cf: &CompactForm) -> DMatrix<f64> {
    let n = cf.input_dim();
    let m = cf.output_dim();
    let s = cf.stacked_dim;
    let nb = cf.lifted_dim;
    let last = cf.widths.len() - 1;
    let mut st = DMatrix::zeros(n + m + 1, nb);
    st.view_mut((0, 0), (n, s)).copy_from(cf.selector_for(0));
    st.view_mut((n, 0), (m, s))
        .copy_from(&(&cf.out_weight * cf.selector_for(last)));
    st.view_mut((n, s), (m, 1)).copy_from(&cf.out_bias);
    st[(n + m, nb - 1)] = 1.0;
    st
}

fn lift(stack: &DMatrix<f64>, inner: &DMatrix<f64>) -> DMatrix<f64> {
    stack.transpose() * inner * stack
}

/// Assembles M_in, M_mid, M_out for concrete P, Q, S on one network.
pub fn assemble(
    cf: &CompactForm,
    p: &InputQc,
    q: &ActivationQc,
    s: &SafetyQc,
) -> Result<LiftedLmi, VerifierError> {
    if p.dim() != cf.input_dim() {
        return Err(VerifierError::DimensionMismatch {
            block: "input QC",
            expected: cf.input_dim(),
            got: p.dim(),
        });
    }
    if q.dim() != cf.hidden_dim {
        return Err(VerifierError::DimensionMismatch {
            block: "activation QC",
            expected: cf.hidden_dim,
            got: q.dim(),
        });
    }
    if s.input_dim() != cf.input_dim() || s.output_dim() != cf.output_dim() {
        return Err(VerifierError::DimensionMismatch {
            block: "safety QC",
            expected: cf.input_dim() + cf.output_dim() + 1,
            got: s.matrix().nrows(),
        });
    }
    Ok(LiftedLmi {
        m_in: lift(&in_stack(cf), p.matrix()),
        m_mid: lift(&mid_stack(cf), q.matrix()),
        m_out: lift(&out_stack(cf), s.matrix()),
        lifted_dim: cf.lifted_dim,
    })
}

/// Per-multiplier lifted basis of M_mid; the LMI is linear in these.
struct MultiplierBasis {
    d: usize,
    lam: Vec<DMatrix<f64>>,
    pairs: Vec<((usize, usize), DMatrix<f64>)>,
    nu: Vec<DMatrix<f64>>,
    eta: Vec<DMatrix<f64>>,
}

impl MultiplierBasis {
    fn new(cf: &CompactForm, pairwise: bool) -> Self {
        let d = cf.hidden_dim;
        let stack = mid_stack(cf);
        let unit_mid = |mult: &ReluMultipliers| lift(&stack, qc::relu_qc(mult).matrix());

        let mut lam = Vec::with_capacity(d);
        let mut nu = Vec::with_capacity(d);
        let mut eta = Vec::with_capacity(d);
        for i in 0..d {
            let mut m = ReluMultipliers::zeros(d);
            m.lam[i] = 1.0;
            lam.push(unit_mid(&m));
            let mut m = ReluMultipliers::zeros(d);
            m.nu[i] = 1.0;
            nu.push(unit_mid(&m));
            let mut m = ReluMultipliers::zeros(d);
            m.eta[i] = 1.0;
            eta.push(unit_mid(&m));
        }
        let mut pairs = Vec::new();
        if pairwise {
            for i in 0..d {
                for j in (i + 1)..d {
                    let mut m = ReluMultipliers::zeros(d);
                    m.lam_pair = vec![((i, j), 1.0)];
                    pairs.push(((i, j), unit_mid(&m)));
                }
            }
        }
        MultiplierBasis {
            d,
            lam,
            pairs,
            nu,
            eta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CertStatus {
    /// The LMI holds: the output satisfies the risk-aware safety constraint.
    Certified,
    /// The sufficient condition did not close; proves nothing.
    Undetermined,
}

/// Result of one certificate search.
#[derive(Debug, Clone)]
pub struct Certificate {
    pub status: CertStatus,
    pub multipliers: ReluMultipliers,
    /// Nonnegative scaling applied to each supplied input QC (all 1 when
    /// the scaling search is disabled).
    pub input_scale: Vec<f64>,
    /// Coupled-classification multiplier matrix, when that mode was used.
    pub gamma: Option<DMatrix<f64>>,
    /// Min-eigenvalue margin of −(M_in + M_mid + M_out), recomputed from the
    /// returned multipliers. Certified requires slack ≥ −tol_psd.
    pub slack: f64,
    pub epsilon: f64,
    pub report: SolverReport,
}

impl Certificate {
    pub fn is_certified(&self) -> bool {
        self.status == CertStatus::Certified
    }
}

/// Safety specification accepted by `verify`.
#[derive(Debug, Clone)]
pub enum SafetySpec {
    /// A fixed S matrix.
    Fixed(SafetyQc),
    /// Coupled classification structure; Γ entries become nonnegative
    /// decision variables, normalized to ΣΓ_{ij} = 1 to rule out the
    /// vacuous zero certificate.
    CoupledClassification(CoupledClassificationQc),
}

impl From<SafetyQc> for SafetySpec {
    fn from(s: SafetyQc) -> Self {
        SafetySpec::Fixed(s)
    }
}

struct MultiplierVars {
    tau: Vec<VarId>,
    lam: Vec<VarId>,
    pairs: Vec<VarId>,
    nu: Vec<VarId>,
    eta: Vec<VarId>,
}

/// Adds multiplier variables with their sign constraints and pushes the
/// corresponding terms of −M_sum into `lmi`. Each supplied input QC gets
/// its own nonnegative scale τᵢ when `scale_input` is set: the admissible
/// input family is a convex cone (positive homogeneity and subadditivity of
/// WC-CVaR), so any conic combination of admissible QCs stays admissible.
fn add_multiplier_terms(
    prog: &mut ConicProgram,
    lmi: &mut AffineMat,
    basis: &MultiplierBasis,
    m_ins: &[DMatrix<f64>],
    scale_input: bool,
) -> MultiplierVars {
    let mut tau = Vec::new();
    if scale_input {
        for m_in in m_ins {
            let t = prog.add_var();
            prog.require_nonneg(LinExpr::var(t));
            lmi.push(t, -m_in);
            tau.push(t);
        }
    } else {
        for m_in in m_ins {
            lmi.constant -= m_in;
        }
    }
    let mut lam = Vec::with_capacity(basis.d);
    for b in &basis.lam {
        let v = prog.add_var();
        lmi.push(v, -b);
        lam.push(v);
    }
    let mut pairs = Vec::with_capacity(basis.pairs.len());
    for (_, b) in &basis.pairs {
        let v = prog.add_var();
        prog.require_nonneg(LinExpr::var(v));
        lmi.push(v, -b);
        pairs.push(v);
    }
    let mut nu = Vec::with_capacity(basis.d);
    for b in &basis.nu {
        let v = prog.add_var();
        prog.require_nonneg(LinExpr::var(v));
        lmi.push(v, -b);
        nu.push(v);
    }
    let mut eta = Vec::with_capacity(basis.d);
    for b in &basis.eta {
        let v = prog.add_var();
        prog.require_nonneg(LinExpr::var(v));
        lmi.push(v, -b);
        eta.push(v);
    }
    MultiplierVars {
        tau,
        lam,
        pairs,
        nu,
        eta,
    }
}

fn extract_multipliers(basis: &MultiplierBasis, vars: &MultiplierVars, x: &[f64]) -> ReluMultipliers {
    // Clip solver round-off on the sign-constrained entries.
    let lam = DVector::from_iterator(basis.d, vars.lam.iter().map(|&v| x[v]));
    let nu = DVector::from_iterator(basis.d, vars.nu.iter().map(|&v| x[v].max(0.0)));
    let eta = DVector::from_iterator(basis.d, vars.eta.iter().map(|&v| x[v].max(0.0)));
    let lam_pair = basis
        .pairs
        .iter()
        .zip(&vars.pairs)
        .map(|(&(ij, _), &v)| (ij, x[v].max(0.0)))
        .collect();
    ReluMultipliers {
        lam,
        lam_pair,
        nu,
        eta,
    }
}

fn input_qc_precheck(
    inputs: &[InputQc],
    ms: &MomentSet,
    eps: RiskLevel,
    options: &VerifyOptions,
) -> Result<(), VerifierError> {
    if inputs.is_empty() {
        return Err(VerifierError::DimensionMismatch {
            block: "input QC list",
            expected: 1,
            got: 0,
        });
    }
    for p in inputs {
        if p.dim() != ms.dim() {
            return Err(VerifierError::DimensionMismatch {
                block: "input QC",
                expected: ms.dim(),
                got: p.dim(),
            });
        }
        let value = risk::wc_cvar_quadratic_with(&p.loss(), ms, eps, &options.solver)?.value;
        if value > options.tol_feas {
            return Err(VerifierError::InputQcViolated {
                value,
                tol: options.tol_feas,
            });
        }
    }
    Ok(())
}

// Slack floor keeping the feasibility objective bounded; certification only
// inspects t near zero.
const SLACK_FLOOR: f64 = -1.0;

/// Searches activation multipliers closing the safety LMI for a fixed (or
/// Γ-parameterized) specification. `Undetermined` means the sufficient
/// condition did not close — it never claims a violation.
///
/// `inputs` is one or more admissible input QCs (for a polytope, one per
/// face); the search combines them conically.
pub fn verify(
    net: &Network,
    inputs: &[InputQc],
    spec: &SafetySpec,
    ms: &MomentSet,
    eps: RiskLevel,
    options: &VerifyOptions,
) -> Result<Certificate, VerifierError> {
    if ms.dim() != net.input_dim() {
        return Err(VerifierError::DimensionMismatch {
            block: "moment set",
            expected: net.input_dim(),
            got: ms.dim(),
        });
    }
    input_qc_precheck(inputs, ms, eps, options)?;

    let cf = net.compact_form();
    let basis = MultiplierBasis::new(&cf, options.pairwise_multipliers);
    let istack = in_stack(&cf);
    let m_ins: Vec<DMatrix<f64>> = inputs.iter().map(|p| lift(&istack, p.matrix())).collect();
    let ostack = out_stack(&cf);

    let (m_out_const, gamma_basis): (DMatrix<f64>, Option<Vec<((usize, usize), DMatrix<f64>)>>) =
        match spec {
            SafetySpec::Fixed(s) => {
                if s.input_dim() != cf.input_dim() || s.output_dim() != cf.output_dim() {
                    return Err(VerifierError::DimensionMismatch {
                        block: "safety QC",
                        expected: cf.input_dim() + cf.output_dim() + 1,
                        got: s.matrix().nrows(),
                    });
                }
                (lift(&ostack, s.matrix()), None)
            }
            SafetySpec::CoupledClassification(coupled) => {
                if coupled.input_dim != cf.input_dim() || coupled.count != cf.output_dim() {
                    return Err(VerifierError::DimensionMismatch {
                        block: "coupled classification QC",
                        expected: cf.output_dim(),
                        got: coupled.count,
                    });
                }
                let lifted = coupled
                    .gamma_basis()
                    .into_iter()
                    .map(|(ij, s)| (ij, lift(&ostack, &s)))
                    .collect();
                (DMatrix::zeros(cf.lifted_dim, cf.lifted_dim), Some(lifted))
            }
        };

    let nb = cf.lifted_dim;
    let mut prog = ConicProgram::new();
    let t = prog.add_var();
    prog.add_objective(t, 1.0);
    let mut floor = LinExpr::constant(-SLACK_FLOOR);
    floor.push(t, 1.0);
    prog.require_nonneg(floor);

    // t·I − M_sum ⪰ 0.
    let mut lmi = AffineMat::from_constant(-&m_out_const);
    lmi.push(t, DMatrix::identity(nb, nb));
    let vars = add_multiplier_terms(&mut prog, &mut lmi, &basis, &m_ins, options.scale_input);

    let mut gamma_vars: Vec<((usize, usize), VarId)> = Vec::new();
    if let Some(gb) = &gamma_basis {
        let mut norm = LinExpr::constant(-1.0);
        for (ij, b) in gb {
            let v = prog.add_var();
            prog.require_nonneg(LinExpr::var(v));
            lmi.push(v, -b);
            norm.push(v, 1.0);
            gamma_vars.push((*ij, v));
        }
        prog.require_zero(norm);
    }
    prog.require_psd(&lmi);

    let sol = prog.solve(&options.solver)?;
    if sol.report.status == SolveStatus::Infeasible {
        // Cannot happen with the slack floor in range; treat defensively.
        return Ok(Certificate {
            status: CertStatus::Undetermined,
            multipliers: ReluMultipliers::zeros(basis.d),
            input_scale: vec![if options.scale_input { 0.0 } else { 1.0 }; m_ins.len()],
            gamma: None,
            slack: f64::NEG_INFINITY,
            epsilon: eps.value(),
            report: sol.report,
        });
    }
    // Any other terminal status still carries a candidate point. The
    // certification decision below rests on the recomputed eigenvalue
    // margin of the returned (sign-clipped) multipliers, never on the
    // solver's own claim, so a reduced-accuracy point is either good
    // enough or honestly Undetermined.

    let multipliers = extract_multipliers(&basis, &vars, &sol.x);
    let tau = extract_scales(&vars, &sol.x, m_ins.len());
    let gamma = if gamma_vars.is_empty() {
        None
    } else {
        let m = cf.output_dim();
        let mut g = DMatrix::zeros(m, m);
        for &((i, j), v) in &gamma_vars {
            let val = sol.x[v].max(0.0);
            g[(i, j)] = val;
            g[(j, i)] = val;
        }
        Some(g)
    };

    // Recompute the margin from the certificate itself.
    let m_mid = lift(&mid_stack(&cf), qc::relu_qc(&multipliers).matrix());
    let m_out = match (spec, &gamma) {
        (SafetySpec::Fixed(_), _) => m_out_const.clone(),
        (SafetySpec::CoupledClassification(coupled), Some(g)) => {
            lift(&ostack, coupled.s_of_gamma(g)?.matrix())
        }
        _ => m_out_const.clone(),
    };
    let mut m_sum = m_mid + m_out;
    for (t, m_in) in tau.iter().zip(&m_ins) {
        m_sum += m_in * *t;
    }
    let slack = -linalg::max_eigenvalue(&m_sum);
    let status = if slack >= -options.tol_psd {
        CertStatus::Certified
    } else {
        CertStatus::Undetermined
    };

    Ok(Certificate {
        status,
        multipliers,
        input_scale: tau,
        gamma,
        slack,
        epsilon: eps.value(),
        report: sol.report,
    })
}

fn extract_scales(vars: &MultiplierVars, x: &[f64], count: usize) -> Vec<f64> {
    if vars.tau.is_empty() {
        vec![1.0; count]
    } else {
        vars.tau.iter().map(|&v| x[v].max(0.0)).collect()
    }
}

/// Origin-centered ellipsoid {y : yᵀE⁻¹y ≤ 1} with shape matrix E ≻ 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    shape: DMatrix<f64>,
}

impl Ellipsoid {
    pub fn new(shape: DMatrix<f64>) -> Result<Self, VerifierError> {
        let shape = linalg::symmetrize(&shape);
        if linalg::spd_inverse(&shape).is_none() {
            return Err(VerifierError::Numerical(
                "ellipsoid shape matrix is not positive definite".into(),
            ));
        }
        Ok(Ellipsoid { shape })
    }

    pub fn dim(&self) -> usize {
        self.shape.nrows()
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    pub fn inverse_shape(&self) -> DMatrix<f64> {
        linalg::spd_inverse(&self.shape).expect("validated at construction")
    }

    /// yᵀE⁻¹y (inside means ≤ 1).
    pub fn level(&self, y: &DVector<f64>) -> f64 {
        linalg::quad_form(&self.inverse_shape(), y)
    }

    pub fn contains(&self, y: &DVector<f64>) -> bool {
        self.level(y) <= 1.0
    }

    /// log det E; grows with volume.
    pub fn log_det_shape(&self) -> f64 {
        linalg::spd_log_det(&self.shape).expect("validated at construction")
    }

    /// Boundary polyline for 2-D plotting: E^{1/2}·(cos θ, sin θ).
    pub fn boundary_points(&self, count: usize) -> Vec<(f64, f64)> {
        assert_eq!(self.dim(), 2, "boundary sampling is for 2-D ellipsoids");
        let half = linalg::sym_sqrt(&self.shape);
        (0..count)
            .map(|k| {
                let th = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                let u = DVector::from_column_slice(&[th.cos(), th.sin()]);
                let p = &half * u;
                (p[0], p[1])
            })
            .collect()
    }
}

/// Solves the minimum-volume ellipsoidal safe set for y = C[x; f(x)]:
/// maximize log det X over X = E⁻¹ ≻ 0 and activation multipliers subject to
/// M_in + M_mid + M_out(S(X)) ⪯ 0 with S(X) = [[CᵀXC, 0],[0, −1]].
pub fn min_volume_ellipsoid(
    net: &Network,
    inputs: &[InputQc],
    c_map: &DMatrix<f64>,
    ms: &MomentSet,
    eps: RiskLevel,
    options: &VerifyOptions,
) -> Result<(Ellipsoid, Certificate), VerifierError> {
    if ms.dim() != net.input_dim() {
        return Err(VerifierError::DimensionMismatch {
            block: "moment set",
            expected: net.input_dim(),
            got: ms.dim(),
        });
    }
    let nm = net.input_dim() + net.output_dim();
    if c_map.ncols() != nm {
        return Err(VerifierError::DimensionMismatch {
            block: "output map C",
            expected: nm,
            got: c_map.ncols(),
        });
    }
    input_qc_precheck(inputs, ms, eps, options)?;

    let cf = net.compact_form();
    let basis = MultiplierBasis::new(&cf, options.pairwise_multipliers);
    let istack = in_stack(&cf);
    let m_ins: Vec<DMatrix<f64>> = inputs.iter().map(|p| lift(&istack, p.matrix())).collect();
    let ostack = out_stack(&cf);
    let nb = cf.lifted_dim;
    let my = c_map.nrows();

    // G maps 𝐱̄ to y; r picks the homogenizing 1.
    let g = c_map * ostack.view((0, 0), (nm, nb));
    let corner = ostack.row(nm).transpose();
    let corner_outer = &corner * corner.transpose();

    let mut prog = ConicProgram::new();
    let xv = prog.add_psd_var(my);
    prog.maximize_log_det(&xv);

    // −M_sum(X, Q, τ) ⪰ 0.
    let mut lmi = AffineMat::from_constant(corner_outer.clone());
    let vars = add_multiplier_terms(&mut prog, &mut lmi, &basis, &m_ins, options.scale_input);
    for a in 0..my {
        for b in a..my {
            let ga = g.row(a);
            let gb = g.row(b);
            let mut basis_ab = ga.transpose() * gb;
            if a != b {
                basis_ab += gb.transpose() * ga;
            }
            lmi.push(xv.entry(a, b), -basis_ab);
        }
    }
    prog.require_psd(&lmi);

    let sol = prog.solve(&options.solver)?;
    match sol.report.status {
        // A strictly PD shape is infeasible exactly when the output is
        // risk-unbounded in some direction under the supplied input QCs.
        SolveStatus::Infeasible => return Err(VerifierError::Unbounded),
        SolveStatus::Unbounded => {
            return Err(VerifierError::Solver {
                status: sol.report.status,
            })
        }
        // Optimal, or a reduced-accuracy point: the slack recompute below
        // decides whether the returned shape actually certifies.
        _ => {}
    }

    let x_opt = xv.value(&sol.x);
    let shape = linalg::spd_inverse(&x_opt).ok_or_else(|| {
        VerifierError::Numerical("optimal E⁻¹ is numerically singular".into())
    })?;
    let ellipsoid = Ellipsoid::new(shape)?;

    let multipliers = extract_multipliers(&basis, &vars, &sol.x);
    let tau = extract_scales(&vars, &sol.x, m_ins.len());
    let m_mid = lift(&mid_stack(&cf), qc::relu_qc(&multipliers).matrix());
    let m_out = &g.transpose() * &x_opt * &g - corner_outer;
    let mut m_sum = m_mid + m_out;
    for (t, m_in) in tau.iter().zip(&m_ins) {
        m_sum += m_in * *t;
    }
    let slack = -linalg::max_eigenvalue(&m_sum);
    let status = if slack >= -options.tol_psd {
        CertStatus::Certified
    } else {
        CertStatus::Undetermined
    };

    Ok((
        ellipsoid,
        Certificate {
            status,
            multipliers,
            input_scale: tau,
            gamma: None,
            slack,
            epsilon: eps.value(),
            report: sol.report,
        },
    ))
}

/// JSON shape of a certificate, as emitted by the CLI and experiment
/// pipelines.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateJson {
    pub status: CertStatus,
    pub slack: f64,
    pub epsilon: f64,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: u32,
    pub solve_time: f64,
    pub input_scale: Vec<f64>,
    pub multipliers: MultipliersJson,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ellipsoid: Option<EllipsoidJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultipliersJson {
    pub lam: Vec<f64>,
    pub lam_pair: Vec<PairMultiplierJson>,
    pub nu: Vec<f64>,
    pub eta: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairMultiplierJson {
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EllipsoidJson {
    pub shape: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// Unit eigenvectors, one row per eigenvalue, for plotting.
    pub axes: Vec<Vec<f64>>,
    pub log_det: f64,
}

pub fn certificate_json(cert: &Certificate, ellipsoid: Option<&Ellipsoid>) -> CertificateJson {
    CertificateJson {
        status: cert.status,
        slack: cert.slack,
        epsilon: cert.epsilon,
        objective: cert.report.objective,
        primal_residual: cert.report.primal_residual,
        dual_residual: cert.report.dual_residual,
        iterations: cert.report.iterations,
        solve_time: cert.report.solve_time,
        input_scale: cert.input_scale.clone(),
        multipliers: MultipliersJson {
            lam: cert.multipliers.lam.iter().copied().collect(),
            lam_pair: cert
                .multipliers
                .lam_pair
                .iter()
                .map(|&((i, j), value)| PairMultiplierJson { i, j, value })
                .collect(),
            nu: cert.multipliers.nu.iter().copied().collect(),
            eta: cert.multipliers.eta.iter().copied().collect(),
        },
        gamma: cert.gamma.as_ref().map(|g| {
            (0..g.nrows())
                .map(|i| g.row(i).iter().copied().collect())
                .collect()
        }),
        ellipsoid: ellipsoid.map(ellipsoid_json),
    }
}

pub fn ellipsoid_json(e: &Ellipsoid) -> EllipsoidJson {
    let eig = linalg::symmetrize(e.shape()).symmetric_eigen();
    EllipsoidJson {
        shape: (0..e.dim())
            .map(|i| e.shape().row(i).iter().copied().collect())
            .collect(),
        eigenvalues: eig.eigenvalues.iter().copied().collect(),
        axes: (0..e.dim())
            .map(|i| eig.eigenvectors.column(i).iter().copied().collect())
            .collect(),
        log_det: e.log_det_shape(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Layer;
    use crate::qc::{input_qc_ellipsoid, SafetyProvenance};
    use nalgebra::{dmatrix, dvector};
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn eps(e: f64) -> RiskLevel {
        RiskLevel::new(e).unwrap()
    }

    fn random_net(rng: &mut impl Rng, widths: &[usize], out: usize) -> Network {
        let mut hidden = Vec::new();
        for k in 1..widths.len() {
            let w = DMatrix::from_fn(widths[k], widths[k - 1], |_, _| rng.random_range(-1.0..1.0));
            let b = DVector::from_fn(widths[k], |_, _| rng.random_range(-1.0..1.0));
            hidden.push(Layer::new(w, b).unwrap());
        }
        let last = *widths.last().unwrap();
        let w = DMatrix::from_fn(out, last, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(out, |_, _| rng.random_range(-1.0..1.0));
        Network::new(hidden, Layer::new(w, b).unwrap()).unwrap()
    }

    #[test]
    fn assemble_zero_blocks() {
        let net = Network::new(
            vec![Layer::new(DMatrix::zeros(3, 2), DVector::zeros(3)).unwrap()],
            Layer::new(DMatrix::zeros(1, 3), DVector::zeros(1)).unwrap(),
        )
        .unwrap();
        let cf = net.compact_form();
        let p = InputQc::from_matrix(DMatrix::zeros(3, 3), crate::qc::InputGeometry::Custom).unwrap();
        let q = qc::relu_qc(&ReluMultipliers::zeros(3));
        let s = SafetyQc::from_matrix(DMatrix::zeros(4, 4), 2, 1, SafetyProvenance::Custom).unwrap();
        let lmi = assemble(&cf, &p, &q, &s).unwrap();
        assert_eq!(lmi.m_in.nrows(), 6);
        assert_eq!(lmi.sum().amax(), 0.0);
    }

    #[test]
    fn assemble_shapes_2_3_1() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let net = random_net(&mut rng, &[2, 3], 1);
        let cf = net.compact_form();
        assert_eq!(cf.lifted_dim, 6);
        let ms = MomentSet::centered(DMatrix::identity(2, 2)).unwrap();
        let p = input_qc_ellipsoid(&ms, eps(0.5)).unwrap();
        let q = qc::relu_qc(&ReluMultipliers::zeros(3));
        let s = SafetyQc::constant(-1.0, 2, 1);
        let lmi = assemble(&cf, &p, &q, &s).unwrap();
        assert_eq!(lmi.m_in.shape(), (6, 6));
        assert_eq!(lmi.m_mid.shape(), (6, 6));
        assert_eq!(lmi.m_out.shape(), (6, 6));
    }

    #[test]
    fn assemble_dimension_errors_name_the_block() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let net = random_net(&mut rng, &[2, 3], 1);
        let cf = net.compact_form();
        let p = InputQc::from_matrix(DMatrix::zeros(5, 5), crate::qc::InputGeometry::Custom).unwrap();
        let q = qc::relu_qc(&ReluMultipliers::zeros(3));
        let s = SafetyQc::constant(-1.0, 2, 1);
        let err = assemble(&cf, &p, &q, &s).unwrap_err();
        assert!(matches!(
            err,
            VerifierError::DimensionMismatch { block: "input QC", .. }
        ));
        let p = input_qc_ellipsoid(&MomentSet::centered(DMatrix::identity(2, 2)).unwrap(), eps(0.5))
            .unwrap();
        let q_bad = qc::relu_qc(&ReluMultipliers::zeros(4));
        let err = assemble(&cf, &p, &q_bad, &s).unwrap_err();
        assert!(matches!(
            err,
            VerifierError::DimensionMismatch { block: "activation QC", .. }
        ));
    }

    // The key identity behind the certificate proof: on a stacked trajectory,
    // the lifted middle block evaluates to the activation QC at z = 𝐀𝐱 + 𝐛.
    #[test]
    fn trajectory_substitution_identity() {
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        for widths in [vec![2, 3], vec![3, 4, 2]] {
            let net = random_net(&mut rng, &widths, 2);
            let cf = net.compact_form();
            let d = cf.hidden_dim;
            let lam = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            let nu = DVector::from_fn(d, |_, _| rng.random_range(0.0..1.0));
            let eta = DVector::from_fn(d, |_, _| rng.random_range(0.0..1.0));
            let mult = ReluMultipliers::new(lam, vec![], nu, eta).unwrap();
            let q = qc::relu_qc(&mult);
            let m_mid = lift(&mid_stack(&cf), q.matrix());

            let ms = MomentSet::centered(DMatrix::identity(widths[0], widths[0])).unwrap();
            let p = input_qc_ellipsoid(&ms, eps(0.3)).unwrap();
            let m_in = lift(&in_stack(&cf), p.matrix());
            let s = SafetyQc::constant(-2.0, widths[0], 2);
            let m_out = lift(&out_stack(&cf), s.matrix());

            for _ in 0..25 {
                let x = DVector::from_fn(widths[0], |_, _| rng.random_range(-2.0..2.0));
                let (f, traj) = net.forward(&x).unwrap();
                let stacked = cf.stack_trajectory(&traj);
                let mut lifted = DVector::zeros(cf.lifted_dim);
                lifted.rows_mut(0, cf.stacked_dim).copy_from(&stacked);
                lifted[cf.lifted_dim - 1] = 1.0;

                let z = &cf.big_a * &stacked + &cf.big_b;
                let direct = q.form(&z);
                let via_lift = linalg::quad_form(&m_mid, &lifted);
                assert!((direct - via_lift).abs() < 1e-10, "mid mismatch");

                let in_direct = linalg::quad_form(p.matrix(), &{
                    let mut v = DVector::zeros(widths[0] + 1);
                    v.rows_mut(0, widths[0]).copy_from(&x);
                    v[widths[0]] = 1.0;
                    v
                });
                assert!((in_direct - linalg::quad_form(&m_in, &lifted)).abs() < 1e-10);

                let out_direct = s.evaluate(&x, &f);
                assert!((out_direct - linalg::quad_form(&m_out, &lifted)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn verify_constant_specs() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let net = random_net(&mut rng, &[2, 3], 1);
        let ms = MomentSet::centered(DMatrix::identity(2, 2) * 0.25).unwrap();
        let p = input_qc_ellipsoid(&ms, eps(0.5)).unwrap();
        let opts = VerifyOptions::default();

        let safe = SafetyQc::constant(-1.0, 2, 1);
        let cert = verify(&net, std::slice::from_ref(&p), &safe.into(), &ms, eps(0.5), &opts).unwrap();
        assert!(cert.is_certified(), "slack {}", cert.slack);
        assert!(cert.slack >= -opts.tol_psd);

        let unsafe_spec = SafetyQc::constant(1.0, 2, 1);
        let cert = verify(&net, std::slice::from_ref(&p), &unsafe_spec.into(), &ms, eps(0.5), &opts).unwrap();
        assert_eq!(cert.status, CertStatus::Undetermined);
    }

    #[test]
    fn verify_rejects_bad_input_qc() {
        let mut rng = ChaCha12Rng::seed_from_u64(14);
        let net = random_net(&mut rng, &[2, 3], 1);
        let ms = MomentSet::centered(DMatrix::identity(2, 2)).unwrap();
        // Constant +1 form: never an admissible risk-bounded description.
        let mut bad = DMatrix::zeros(3, 3);
        bad[(2, 2)] = -1.0;
        let p = InputQc::from_matrix(bad, crate::qc::InputGeometry::Custom).unwrap();
        let err = verify(
            &net,
            &[p],
            &SafetyQc::constant(-1.0, 2, 1).into(),
            &ms,
            eps(0.5),
            &VerifyOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, VerifierError::InputQcViolated { .. }));
    }

    #[test]
    fn pass_through_recovers_input_ellipsoid() {
        // Identity network, y = x: the smallest certified ellipsoid is the
        // input risk ellipsoid itself.
        let net = Network::identity(2);
        let sigma = dmatrix![0.25, 0.0; 0.0, 0.25];
        let ms = MomentSet::centered(sigma.clone()).unwrap();
        let e = 0.5;
        let p = input_qc_ellipsoid(&ms, eps(e)).unwrap();
        let mut c = DMatrix::zeros(2, 4);
        c[(0, 0)] = 1.0;
        c[(1, 1)] = 1.0;
        let (ell, cert) = min_volume_ellipsoid(
            &net,
            &[p],
            &c,
            &ms,
            eps(e),
            &VerifyOptions::default(),
        )
        .unwrap();
        assert!(cert.is_certified(), "slack {}", cert.slack);
        let expect = sigma * (2.0 / e);
        assert!(
            (ell.shape() - &expect).amax() < 1e-3,
            "shape {} expect {}",
            ell.shape(),
            expect
        );
    }

    #[test]
    fn ellipsoid_basics() {
        let e = Ellipsoid::new(dmatrix![4.0, 0.0; 0.0, 1.0]).unwrap();
        assert!(e.contains(&dvector![2.0, 0.0]));
        assert!(!e.contains(&dvector![2.1, 0.0]));
        assert!((e.log_det_shape() - 4.0_f64.ln()).abs() < 1e-12);
        let pts = e.boundary_points(4);
        assert!((pts[0].0 - 2.0).abs() < 1e-12);
        assert!((pts[1].1 - 1.0).abs() < 1e-12);
        assert!(Ellipsoid::new(dmatrix![1.0, 2.0; 2.0, 1.0]).is_err());
    }
}
