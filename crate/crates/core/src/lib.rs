//! Tail-risk-aware safety certification of feed-forward ReLU networks.
//!
//! The toolkit bounds the worst-case Conditional Value-at-Risk (WC-CVaR) of
//! quadratic output losses over *all* input distributions sharing a given
//! mean and covariance, and turns those bounds into semidefinite
//! certificates:
//!
//! - [`risk`] — moment ambiguity sets and WC-CVaR of quadratic losses,
//!   solved exactly as PSD-cone programs.
//! - [`network`] — ReLU MLPs, their lifted compact form, and JSON weight
//!   serialization.
//! - [`qc`] — quadratic-constraint builders: risk-aware input sets, ReLU
//!   activation multipliers, and output safety specifications.
//! - [`verifier`] — the lifted LMI assembly, the feasibility certificate
//!   search, and minimum-volume ellipsoidal safe sets via log-det
//!   maximization.
//! - [`applications`] — closed-loop reachability and classification
//!   robustness pipelines with a moment-matched distribution zoo.
//! - [`sdp`] — the conic-program contract all solves go through.
//! - [`io`] — CSV/JSON matrix formats shared by the CLI.

// Links the system BLAS/LAPACK used by the PSD cone backend.
extern crate openblas_src as _;

pub mod applications;
pub mod io;
pub mod linalg;
pub mod network;
pub mod qc;
pub mod risk;
pub mod sdp;
pub mod verifier;
