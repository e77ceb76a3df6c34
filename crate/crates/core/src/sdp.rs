//! Conic-program contract behind every solve in the crate.
//!
//! A problem is stated over scalar variables `x` as
//!
//! ```text
//!     minimize qᵀx   subject to   expr_block ∈ K
//! ```
//!
//! where each block of affine expressions lives in the zero, nonnegative,
//! PSD-triangle, or exponential cone. The contract is deliberately small:
//! any interior-point solver with a PSD cone satisfies it. The backend here
//! is Clarabel.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DMatrix;
use thiserror::Error;

pub type VarId = usize;

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("solver backend rejected the problem: {0}")]
    Backend(String),
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Affine expression `constant + Σ coeff·x_i`.
#[derive(Debug, Clone, Default)]
pub struct LinExpr {
    pub constant: f64,
    pub terms: Vec<(VarId, f64)>,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        LinExpr {
            constant: c,
            terms: Vec::new(),
        }
    }

    pub fn var(v: VarId) -> Self {
        LinExpr {
            constant: 0.0,
            terms: vec![(v, 1.0)],
        }
    }

    pub fn term(v: VarId, coeff: f64) -> Self {
        LinExpr {
            constant: 0.0,
            terms: vec![(v, coeff)],
        }
    }

    pub fn push(&mut self, v: VarId, coeff: f64) {
        if coeff != 0.0 {
            self.terms.push((v, coeff));
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        LinExpr {
            constant: a * self.constant,
            terms: self.terms.iter().map(|&(v, c)| (v, a * c)).collect(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(v, c)| c * x[v]).sum::<f64>()
    }
}

/// Affine symmetric matrix `constant + Σ x_i · basis_i`.
#[derive(Debug, Clone)]
pub struct AffineMat {
    pub dim: usize,
    pub constant: DMatrix<f64>,
    pub terms: Vec<(VarId, DMatrix<f64>)>,
}

impl AffineMat {
    pub fn zero(dim: usize) -> Self {
        AffineMat {
            dim,
            constant: DMatrix::zeros(dim, dim),
            terms: Vec::new(),
        }
    }

    pub fn from_constant(m: DMatrix<f64>) -> Self {
        let dim = m.nrows();
        AffineMat {
            dim,
            constant: m,
            terms: Vec::new(),
        }
    }

    pub fn push(&mut self, v: VarId, basis: DMatrix<f64>) {
        debug_assert_eq!(basis.nrows(), self.dim);
        self.terms.push((v, basis));
    }

    /// Entry (i, j) as an affine expression.
    fn entry(&self, i: usize, j: usize) -> LinExpr {
        let mut e = LinExpr::constant(self.constant[(i, j)]);
        for (v, b) in &self.terms {
            let c = b[(i, j)];
            if c != 0.0 {
                e.push(*v, c);
            }
        }
        e
    }

    /// Concrete matrix at a solution point.
    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (v, b) in &self.terms {
            m += b * x[*v];
        }
        m
    }
}

/// Triangle-packed symmetric PSD matrix variable.
#[derive(Debug, Clone)]
pub struct MatrixVar {
    pub dim: usize,
    /// Upper-triangle entries, column-major: (0,0),(0,1),(1,1),(0,2),...
    pub vars: Vec<VarId>,
}

impl MatrixVar {
    /// Index of entry (i, j), either order.
    pub fn entry(&self, i: usize, j: usize) -> VarId {
        let (r, c) = if i <= j { (i, j) } else { (j, i) };
        self.vars[c * (c + 1) / 2 + r]
    }

    /// Affine view `X = Σ x_ij Sym_ij` for use inside larger LMIs.
    pub fn affine(&self) -> AffineMat {
        let mut am = AffineMat::zero(self.dim);
        for j in 0..self.dim {
            for i in 0..=j {
                let mut basis = DMatrix::zeros(self.dim, self.dim);
                basis[(i, j)] = 1.0;
                basis[(j, i)] = 1.0;
                if i == j {
                    basis[(i, i)] = 1.0;
                }
                am.push(self.entry(i, j), basis);
            }
        }
        am
    }

    pub fn value(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for j in 0..self.dim {
            for i in 0..=j {
                let v = x[self.entry(i, j)];
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }
}

/// Handle for a log-det objective term; recovers the achieved value.
#[derive(Debug, Clone)]
pub struct LogDetHandle {
    t_vars: Vec<VarId>,
}

impl LogDetHandle {
    /// Σ tᵢ = log det X at the optimum.
    pub fn value(&self, x: &[f64]) -> f64 {
        self.t_vars.iter().map(|&v| x[v]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalLimit,
}

impl SolveStatus {
    pub fn is_optimal(self) -> bool {
        self == SolveStatus::Optimal
    }
}

/// Outcome summary of one conic solve.
#[derive(Debug, Clone)]
pub struct SolverReport {
    pub status: SolveStatus,
    /// Optimal objective; meaningful only when `status` is `Optimal`.
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: u32,
    pub solve_time: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    pub report: SolverReport,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub tol_feas: f64,
    pub tol_gap: f64,
    pub max_iter: u32,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol_feas: 1e-9,
            tol_gap: 1e-9,
            max_iter: 500,
            verbose: false,
        }
    }
}

enum ConeBlock {
    Zero(Vec<LinExpr>),
    Nonneg(Vec<LinExpr>),
    /// svec-packed rows of an affine symmetric matrix required PSD.
    PsdTriangle { dim: usize, rows: Vec<LinExpr> },
    Exp([LinExpr; 3]),
}

/// Incrementally built conic program; `solve` hands it to the backend.
#[derive(Default)]
pub struct ConicProgram {
    n_vars: usize,
    objective: Vec<f64>,
    blocks: Vec<ConeBlock>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn add_var(&mut self) -> VarId {
        self.objective.push(0.0);
        self.n_vars += 1;
        self.n_vars - 1
    }

    pub fn add_vars(&mut self, k: usize) -> Vec<VarId> {
        (0..k).map(|_| self.add_var()).collect()
    }

    /// Adds `coeff` to the (minimized) objective coefficient of `v`.
    pub fn add_objective(&mut self, v: VarId, coeff: f64) {
        self.objective[v] += coeff;
    }

    /// expr = 0
    pub fn require_zero(&mut self, expr: LinExpr) {
        self.blocks.push(ConeBlock::Zero(vec![expr]));
    }

    /// expr ≥ 0
    pub fn require_nonneg(&mut self, expr: LinExpr) {
        self.blocks.push(ConeBlock::Nonneg(vec![expr]));
    }

    /// M(x) ⪰ 0 for an affine symmetric matrix.
    pub fn require_psd(&mut self, m: &AffineMat) {
        let dim = m.dim;
        let mut rows = Vec::with_capacity(dim * (dim + 1) / 2);
        for col in 0..dim {
            for row in 0..=col {
                let e = m.entry(row, col);
                rows.push(if row == col { e } else { e.scaled(SQRT_2) });
            }
        }
        self.blocks.push(ConeBlock::PsdTriangle { dim, rows });
    }

    /// (x, y, z) ∈ K_exp, i.e. y·exp(x/y) ≤ z with y > 0.
    pub fn require_exp(&mut self, x: LinExpr, y: LinExpr, z: LinExpr) {
        self.blocks.push(ConeBlock::Exp([x, y, z]));
    }

    /// New symmetric matrix variable constrained PSD.
    pub fn add_psd_var(&mut self, dim: usize) -> MatrixVar {
        let vars = self.add_vars(dim * (dim + 1) / 2);
        let mv = MatrixVar { dim, vars };
        let am = mv.affine();
        self.require_psd(&am);
        mv
    }

    /// Adds `-log det X` to the minimized objective through the standard
    /// triangular factor bound: tᵢ ≤ log Z_ii with
    /// [[X, Z],[Zᵀ, diag(Z)]] ⪰ 0 and Z lower triangular, so that
    /// Σ tᵢ = log det X at the optimum.
    pub fn maximize_log_det(&mut self, x: &MatrixVar) -> LogDetHandle {
        let d = x.dim;
        // Z lower triangular, stored (i, j) for i >= j.
        let mut z_vars = vec![usize::MAX; d * d];
        for i in 0..d {
            for j in 0..=i {
                z_vars[i * d + j] = self.add_var();
            }
        }
        let z_at = |i: usize, j: usize| z_vars[i * d + j];

        let mut tower = AffineMat::zero(2 * d);
        // Top-left block: X.
        for j in 0..d {
            for i in 0..=j {
                let mut basis = DMatrix::zeros(2 * d, 2 * d);
                basis[(i, j)] = 1.0;
                basis[(j, i)] = 1.0;
                if i == j {
                    basis[(i, i)] = 1.0;
                }
                tower.push(x.entry(i, j), basis);
            }
        }
        // Off-diagonal block Z and bottom-right diag(Z).
        for i in 0..d {
            for j in 0..=i {
                let mut basis = DMatrix::zeros(2 * d, 2 * d);
                basis[(i, d + j)] = 1.0;
                basis[(d + j, i)] = 1.0;
                if i == j {
                    basis[(d + i, d + i)] = 1.0;
                }
                tower.push(z_at(i, j), basis);
            }
        }
        self.require_psd(&tower);

        let mut t_vars = Vec::with_capacity(d);
        for i in 0..d {
            let t = self.add_var();
            self.add_objective(t, -1.0);
            self.require_exp(
                LinExpr::var(t),
                LinExpr::constant(1.0),
                LinExpr::var(z_at(i, i)),
            );
            t_vars.push(t);
        }
        LogDetHandle { t_vars }
    }

    pub fn solve(&self, options: &SolverOptions) -> Result<Solution, SdpError> {
        // Assemble b - Ax ∈ K from the stored rows s = expr.
        let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
        let mut b: Vec<f64> = Vec::new();
        let mut trip_i: Vec<usize> = Vec::new();
        let mut trip_j: Vec<usize> = Vec::new();
        let mut trip_v: Vec<f64> = Vec::new();

        let push_row = |expr: &LinExpr, b: &mut Vec<f64>,
                            ti: &mut Vec<usize>, tj: &mut Vec<usize>, tv: &mut Vec<f64>| {
            let row = b.len();
            b.push(expr.constant);
            for &(v, c) in &expr.terms {
                ti.push(row);
                tj.push(v);
                tv.push(-c);
            }
        };

        for block in &self.blocks {
            match block {
                ConeBlock::Zero(rows) => {
                    cones.push(SupportedConeT::ZeroConeT(rows.len()));
                    for r in rows {
                        push_row(r, &mut b, &mut trip_i, &mut trip_j, &mut trip_v);
                    }
                }
                ConeBlock::Nonneg(rows) => {
                    cones.push(SupportedConeT::NonnegativeConeT(rows.len()));
                    for r in rows {
                        push_row(r, &mut b, &mut trip_i, &mut trip_j, &mut trip_v);
                    }
                }
                ConeBlock::PsdTriangle { dim, rows } => {
                    cones.push(SupportedConeT::PSDTriangleConeT(*dim));
                    for r in rows {
                        push_row(r, &mut b, &mut trip_i, &mut trip_j, &mut trip_v);
                    }
                }
                ConeBlock::Exp(rows) => {
                    cones.push(SupportedConeT::ExponentialConeT());
                    for r in rows.iter() {
                        push_row(r, &mut b, &mut trip_i, &mut trip_j, &mut trip_v);
                    }
                }
            }
        }

        let m = b.len();
        let a = CscMatrix::new_from_triplets(m, self.n_vars, trip_i, trip_j, trip_v);
        let p = CscMatrix::zeros((self.n_vars, self.n_vars));

        let settings = DefaultSettings {
            verbose: options.verbose,
            max_iter: options.max_iter,
            tol_feas: options.tol_feas,
            tol_gap_abs: options.tol_gap,
            tol_gap_rel: options.tol_gap,
            ..DefaultSettings::default()
        };

        let mut solver = DefaultSolver::new(&p, &self.objective, &a, &b, &cones, settings)
            .map_err(|e| SdpError::Backend(format!("{e:?}")))?;
        solver.solve();
        let sol = &solver.solution;

        let status = match sol.status {
            SolverStatus::Solved => SolveStatus::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                SolveStatus::Infeasible
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                SolveStatus::Unbounded
            }
            _ => SolveStatus::NumericalLimit,
        };

        Ok(Solution {
            x: sol.x.clone(),
            report: SolverReport {
                status,
                objective: sol.obj_val,
                primal_residual: sol.r_prim,
                dual_residual: sol.r_dual,
                iterations: sol.iterations,
                solve_time: sol.solve_time,
            },
        })
    }
}
