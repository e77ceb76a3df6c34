//! Closed-loop reachability: minimum-volume ellipsoidal safe sets for
//! x⁺ = Ax + B·f(x) across a grid of risk (or confidence) levels, validated
//! against the sampled distribution zoo.

use super::distributions::{sample, DistributionSpec, Family};
use super::{derive_seed, reach_step, AppError, LtiSystem};
use crate::io;
use crate::network::Network;
use crate::qc::{input_qc_confidence, input_qc_ellipsoid};
use crate::risk::{self, MomentSet, RiskLevel};
use crate::verifier::{
    certificate_json, ellipsoid_json, min_volume_ellipsoid, CertificateJson, Ellipsoid,
    EllipsoidJson, VerifyOptions,
};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl SystemConfig {
    pub fn build(&self) -> Result<LtiSystem, AppError> {
        LtiSystem::new(rows_to_matrix(&self.a)?, rows_to_matrix(&self.b)?)
    }
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, AppError> {
    if rows.is_empty() {
        return Err(AppError::DimensionMismatch("empty matrix in config".into()));
    }
    let c = rows[0].len();
    if rows.iter().any(|r| r.len() != c) {
        return Err(AppError::DimensionMismatch(
            "ragged matrix rows in config".into(),
        ));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), c, &flat))
}

/// Moment source: explicit mean/covariance, or a data file whose rows are
/// observations.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MomentConfig {
    Explicit { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    Data { data: String },
}

impl MomentConfig {
    pub fn build(&self, base_dir: &Path) -> Result<MomentSet, AppError> {
        match self {
            MomentConfig::Explicit { mean, cov } => Ok(MomentSet::new(
                DVector::from_column_slice(mean),
                rows_to_matrix(cov)?,
            )?),
            MomentConfig::Data { data } => {
                let m = io::read_matrix_auto(base_dir.join(data))?;
                super::moment_estimate(&m)
            }
        }
    }
}

/// Whether grid entries are risk levels ε or confidence levels p. The two
/// coincide at p = 1 − ε for the scaled-ellipsoid input set, which is
/// exactly what the experiments check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LevelMode {
    #[default]
    Risk,
    Confidence,
}

fn default_samples() -> usize {
    100_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReachConfig {
    pub system: SystemConfig,
    /// Path to the controller weights, relative to the config file.
    pub network: String,
    pub moment: MomentConfig,
    #[serde(default = "Family::zoo")]
    pub distributions: Vec<Family>,
    pub eps_grid: Vec<f64>,
    #[serde(default)]
    pub mode: LevelMode,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub pairwise_multipliers: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReachDistRow {
    pub family: String,
    pub n: usize,
    /// Fraction of sampled outputs inside the certified ellipsoid.
    pub fraction_inside: f64,
    /// Empirical CVaR_ε of yᵀE⁻¹y − 1; must be ≤ 0 up to sampling error
    /// whenever the certificate holds.
    pub cvar_level: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReachLevel {
    /// Grid value as given (ε in risk mode, p in confidence mode).
    pub level: f64,
    /// Effective risk level used by the solver.
    pub epsilon: f64,
    pub ellipsoid: EllipsoidJson,
    pub certificate: CertificateJson,
    pub solve_seconds: f64,
    pub distributions: Vec<ReachDistRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReachReport {
    pub mode: LevelMode,
    pub levels: Vec<ReachLevel>,
}

/// Sampled clouds kept for plot output.
const PLOT_POINT_CAP: usize = 2000;

pub struct ReachArtifacts {
    pub report: ReachReport,
    /// (family, inputs, outputs) per distribution, for plot data.
    pub clouds: Vec<(String, DMatrix<f64>, DMatrix<f64>)>,
    pub ellipsoids: Vec<(f64, Ellipsoid)>,
}

pub fn run_reachability_experiment(
    cfg: &ReachConfig,
    base_dir: &Path,
) -> Result<ReachArtifacts, AppError> {
    let sys = cfg.system.build()?;
    let net = Network::load(base_dir.join(&cfg.network))?;
    let ms = cfg.moment.build(base_dir)?;
    let c = sys.c_matrix();
    let options = VerifyOptions {
        pairwise_multipliers: cfg.pairwise_multipliers,
        ..VerifyOptions::default()
    };

    // Input clouds and their closed-loop images are level-independent.
    let mut clouds = Vec::with_capacity(cfg.distributions.len());
    for (idx, family) in cfg.distributions.iter().enumerate() {
        let spec = DistributionSpec::new(*family, ms.clone(), derive_seed(cfg.seed, idx as u64));
        let x = sample(&spec, cfg.n_samples)?;
        let y = reach_step(&sys, &net, &x)?;
        clouds.push((family.name().to_string(), x, y));
    }

    let solved: Vec<(f64, f64, Ellipsoid, CertificateJson, f64)> = cfg
        .eps_grid
        .par_iter()
        .map(|&level| -> Result<_, AppError> {
            let epsilon = match cfg.mode {
                LevelMode::Risk => level,
                LevelMode::Confidence => 1.0 - level,
            };
            let eps = RiskLevel::new(epsilon)?;
            let p = match cfg.mode {
                LevelMode::Risk => input_qc_ellipsoid(&ms, eps)?,
                LevelMode::Confidence => input_qc_confidence(&ms, level)?,
            };
            let start = std::time::Instant::now();
            let (ell, cert) = min_volume_ellipsoid(&net, &[p], &c, &ms, eps, &options)?;
            let secs = start.elapsed().as_secs_f64();
            Ok((
                level,
                epsilon,
                ell,
                certificate_json(&cert, None),
                secs,
            ))
        })
        .collect::<Result<_, _>>()?;

    let mut levels = Vec::with_capacity(solved.len());
    let mut ellipsoids = Vec::with_capacity(solved.len());
    for (level, epsilon, ell, cert, secs) in solved {
        let eps = RiskLevel::new(epsilon)?;
        let e_inv = ell.inverse_shape();
        let mut rows = Vec::with_capacity(clouds.len());
        for (family, _x, y) in &clouds {
            let mut inside = 0usize;
            let mut levels_y = Vec::with_capacity(y.nrows());
            for r in 0..y.nrows() {
                let yr = y.row(r).transpose();
                let q = (yr.transpose() * &e_inv * &yr)[(0, 0)];
                if q <= 1.0 {
                    inside += 1;
                }
                levels_y.push(q - 1.0);
            }
            rows.push(ReachDistRow {
                family: family.clone(),
                n: y.nrows(),
                fraction_inside: inside as f64 / y.nrows() as f64,
                cvar_level: risk::empirical_cvar(&levels_y, eps)?,
            });
        }
        levels.push(ReachLevel {
            level,
            epsilon,
            ellipsoid: ellipsoid_json(&ell),
            certificate: cert,
            solve_seconds: secs,
            distributions: rows,
        });
        ellipsoids.push((level, ell));
    }

    Ok(ReachArtifacts {
        report: ReachReport {
            mode: cfg.mode,
            levels,
        },
        clouds,
        ellipsoids,
    })
}

/// Writes `ellipsoids.json`, `stats.csv`, and `plotdata/*.csv` under
/// `out_dir`.
pub fn write_reach_outputs(artifacts: &ReachArtifacts, out_dir: &Path) -> Result<(), AppError> {
    let io_err = |path: &Path, source: std::io::Error| AppError::Io {
        path: path.display().to_string(),
        source,
    };
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let plot_dir = out_dir.join("plotdata");
    std::fs::create_dir_all(&plot_dir).map_err(|e| io_err(&plot_dir, e))?;

    let ell_path = out_dir.join("ellipsoids.json");
    let json = serde_json::to_string_pretty(&artifacts.report).expect("report serializes");
    std::fs::write(&ell_path, json).map_err(|e| io_err(&ell_path, e))?;

    let mut stats = String::from("level,epsilon,family,n_samples,fraction_inside,cvar_level\n");
    for level in &artifacts.report.levels {
        for row in &level.distributions {
            stats.push_str(&format!(
                "{},{},{},{},{},{}\n",
                io::format_f64(level.level),
                io::format_f64(level.epsilon),
                row.family,
                row.n,
                io::format_f64(row.fraction_inside),
                io::format_f64(row.cvar_level),
            ));
        }
    }
    let stats_path = out_dir.join("stats.csv");
    std::fs::write(&stats_path, stats).map_err(|e| io_err(&stats_path, e))?;

    for (level, ell) in &artifacts.ellipsoids {
        if ell.dim() == 2 {
            let pts = ell.boundary_points(360);
            let mut text = String::from("y1,y2\n");
            for (a, b) in pts {
                text.push_str(&format!("{},{}\n", io::format_f64(a), io::format_f64(b)));
            }
            let p = plot_dir.join(format!("ellipse_level_{level:.4}.csv"));
            std::fs::write(&p, text).map_err(|e| io_err(&p, e))?;
        }
    }
    for (family, x, y) in &artifacts.clouds {
        for (tag, m) in [("inputs", x), ("outputs", y)] {
            let keep = m.nrows().min(PLOT_POINT_CAP);
            let mut text = String::new();
            for r in 0..keep {
                let row: Vec<String> = m.row(r).iter().map(|&v| io::format_f64(v)).collect();
                text.push_str(&row.join(","));
                text.push('\n');
            }
            let p = plot_dir.join(format!("{tag}_{family}.csv"));
            std::fs::write(&p, text).map_err(|e| io_err(&p, e))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parses_with_defaults() {
        let text = r#"{
            "system": {"a": [[0.2, 0.0],[0.1, 0.3]], "b": [[-1.0],[0.0]]},
            "network": "controller.json",
            "moment": {"mean": [0.0, 0.0], "cov": [[0.25, 0.0],[0.0, 0.25]]},
            "eps_grid": [0.1, 0.5, 0.9]
        }"#;
        let cfg: ReachConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.mode, LevelMode::Risk);
        assert_eq!(cfg.n_samples, 100_000);
        assert_eq!(cfg.distributions.len(), 6);
        let sys = cfg.system.build().unwrap();
        assert_eq!(sys.state_dim(), 2);
    }

    #[test]
    fn moment_config_variants() {
        let explicit: MomentConfig =
            serde_json::from_str(r#"{"mean": [0.0], "cov": [[1.0]]}"#).unwrap();
        assert!(matches!(explicit, MomentConfig::Explicit { .. }));
        let data: MomentConfig = serde_json::from_str(r#"{"data": "points.csv"}"#).unwrap();
        assert!(matches!(data, MomentConfig::Data { .. }));
    }
}
