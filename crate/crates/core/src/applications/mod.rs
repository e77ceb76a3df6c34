//! Case-study pipelines: closed-loop reachability and classification
//! robustness, plus the moment-matched distribution zoo behind both.

pub mod classification;
pub mod distributions;
pub mod reachability;
pub mod stats;
pub mod toy;

pub use classification::{run_classification_experiment, ClassifyConfig, ClassifyReport};
pub use distributions::{sample, DistributionSpec, Family};
pub use reachability::{run_reachability_experiment, LevelMode, ReachConfig, ReachReport};
pub use stats::{bootstrap_cvar_stderr, margin_stats, MarginStats};

use crate::network::{Network, NetworkError};
use crate::qc::QcError;
use crate::risk::{MomentSet, RiskError};
use crate::verifier::VerifierError;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("insufficient data (need at least 2 rows)")]
    InsufficientData,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Qc(#[from] QcError),
    #[error(transparent)]
    Verifier(#[from] VerifierError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    IoFormat(#[from] crate::io::IoError),
}

/// Discrete-time LTI plant x⁺ = Ax + B·f(x) driven by a network controller.
#[derive(Debug, Clone)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self, AppError> {
        if a.nrows() != a.ncols() {
            return Err(AppError::DimensionMismatch(format!(
                "state matrix must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() {
            return Err(AppError::DimensionMismatch(format!(
                "input matrix has {} rows, state matrix is {}x{}",
                b.nrows(),
                a.nrows(),
                a.ncols()
            )));
        }
        Ok(LtiSystem { a, b })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// The output map [A B] sending [x; f(x)] to x⁺.
    pub fn c_matrix(&self) -> DMatrix<f64> {
        let n = self.state_dim();
        let m = self.input_dim();
        let mut c = DMatrix::zeros(n, n + m);
        c.view_mut((0, 0), (n, n)).copy_from(&self.a);
        c.view_mut((0, n), (n, m)).copy_from(&self.b);
        c
    }
}

/// One closed-loop step per row of `x_batch`: y = Ax + B·f(x).
pub fn reach_step(
    sys: &LtiSystem,
    net: &Network,
    x_batch: &DMatrix<f64>,
) -> Result<DMatrix<f64>, AppError> {
    if x_batch.ncols() != sys.state_dim() {
        return Err(AppError::DimensionMismatch(format!(
            "state batch has {} columns, system expects {}",
            x_batch.ncols(),
            sys.state_dim()
        )));
    }
    if net.input_dim() != sys.state_dim() || net.output_dim() != sys.input_dim() {
        return Err(AppError::DimensionMismatch(format!(
            "controller maps {} -> {}, system expects {} -> {}",
            net.input_dim(),
            net.output_dim(),
            sys.state_dim(),
            sys.input_dim()
        )));
    }
    let mut out = DMatrix::zeros(x_batch.nrows(), sys.state_dim());
    for r in 0..x_batch.nrows() {
        let x = x_batch.row(r).transpose();
        let u = net.eval(&x)?;
        let y = &sys.a * &x + &sys.b * u;
        out.row_mut(r).copy_from(&y.transpose());
    }
    Ok(out)
}

/// Sample mean and biased (1/N) covariance of the rows of `data`,
/// symmetrized and eigenvalue-clipped at zero.
pub fn moment_estimate(data: &DMatrix<f64>) -> Result<MomentSet, AppError> {
    let n = data.nrows();
    if n < 2 {
        return Err(AppError::InsufficientData);
    }
    let dim = data.ncols();
    let mut mean = DVector::zeros(dim);
    for r in 0..n {
        mean += data.row(r).transpose();
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(dim, dim);
    for r in 0..n {
        let d = data.row(r).transpose() - &mean;
        cov += &d * d.transpose();
    }
    cov /= n as f64;
    let cov = crate::linalg::clip_eigenvalues(&cov, 0.0);
    Ok(MomentSet::new(mean, cov)?)
}

/// Deterministic per-task seed derivation, independent of scheduling order.
pub fn derive_seed(base: u64, task: u64) -> u64 {
    // splitmix64 of the combined word.
    let mut z = base ^ task.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
