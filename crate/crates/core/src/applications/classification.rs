//! Risk-aware classification robustness: per-hyperplane certification of a
//! labelled class, then margin statistics across the distribution zoo.

use super::distributions::{sample, DistributionSpec, Family};
use super::reachability::MomentConfig;
use super::stats::{margin_stats, MarginStats};
use super::{derive_seed, AppError};
use crate::io;
use crate::linalg;
use crate::network::Network;
use crate::qc::{classification_qc, input_qc_ellipsoid, ClassificationMode, ClassificationQc};
use crate::risk::{MomentSet, RiskLevel};
use crate::verifier::{certificate_json, verify, CertificateJson, VerifyOptions};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Ridge added to rank-deficient class covariances before building the
/// input QC (class-conditional data is often degenerate).
pub const CLASS_COVARIANCE_RIDGE: f64 = 1e-6;

fn default_eps() -> f64 {
    0.2
}
fn default_samples() -> usize {
    100_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifyConfig {
    /// Path to the classifier weights, relative to the config file.
    pub network: String,
    pub class_index: usize,
    pub class_count: usize,
    pub moment: MomentConfig,
    #[serde(default = "Family::zoo")]
    pub distributions: Vec<Family>,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub pairwise_multipliers: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassRow {
    pub family: String,
    pub n: usize,
    pub stats: MarginStats,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifyReport {
    pub epsilon: f64,
    pub class_index: usize,
    pub class_count: usize,
    /// One certificate per competitor margin f_i − f_c.
    pub certificates: Vec<CertificateJson>,
    pub all_certified: bool,
    /// Ridge applied to the class covariance, when it was rank-deficient.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub applied_ridge: Option<f64>,
    pub rows: Vec<ClassRow>,
    pub solve_seconds: f64,
}

pub struct ClassifyArtifacts {
    pub report: ClassifyReport,
    /// (family, margins) for histogram plot data.
    pub margins: Vec<(String, Vec<f64>)>,
}

/// Classification margin P_diff = f_c − max_{i≠c} f_i per sample row.
pub fn margins_for(
    net: &Network,
    class: usize,
    x: &DMatrix<f64>,
) -> Result<Vec<f64>, AppError> {
    let mut out = Vec::with_capacity(x.nrows());
    for r in 0..x.nrows() {
        let f = net.eval(&x.row(r).transpose())?;
        let fc = f[class];
        let best_other = f
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != class)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        out.push(fc - best_other);
    }
    Ok(out)
}

pub fn run_classification_experiment(
    cfg: &ClassifyConfig,
    base_dir: &Path,
) -> Result<ClassifyArtifacts, AppError> {
    let net = Network::load(base_dir.join(&cfg.network))?;
    if net.output_dim() != cfg.class_count {
        return Err(AppError::DimensionMismatch(format!(
            "network has {} outputs but config claims {} classes",
            net.output_dim(),
            cfg.class_count
        )));
    }
    let eps = RiskLevel::new(cfg.eps)?;
    let raw_ms = cfg.moment.build(base_dir)?;

    // Rank-deficient class covariance gets a ridge before the input QC.
    let min_eig = linalg::min_eigenvalue(raw_ms.covariance());
    let (ms, applied_ridge) = if min_eig < CLASS_COVARIANCE_RIDGE {
        let dim = raw_ms.dim();
        let ridged = raw_ms.covariance() + DMatrix::identity(dim, dim) * CLASS_COVARIANCE_RIDGE;
        (
            MomentSet::new(raw_ms.mean().clone(), ridged)?,
            Some(CLASS_COVARIANCE_RIDGE),
        )
    } else {
        (raw_ms, None)
    };

    let options = VerifyOptions {
        pairwise_multipliers: cfg.pairwise_multipliers,
        ..VerifyOptions::default()
    };
    let p = input_qc_ellipsoid(&ms, eps)?;
    let qc = classification_qc(
        cfg.class_index,
        cfg.class_count,
        net.input_dim(),
        ClassificationMode::PerHyperplane,
    )?;
    let ClassificationQc::PerHyperplane(margin_qcs) = qc else {
        unreachable!("per-hyperplane mode requested")
    };

    let start = std::time::Instant::now();
    let mut certificates = Vec::with_capacity(margin_qcs.len());
    for s in margin_qcs {
        let cert = verify(&net, std::slice::from_ref(&p), &s.into(), &ms, eps, &options)?;
        certificates.push(certificate_json(&cert, None));
    }
    let solve_seconds = start.elapsed().as_secs_f64();
    let all_certified = certificates
        .iter()
        .all(|c| matches!(c.status, crate::verifier::CertStatus::Certified));

    let mut rows = Vec::with_capacity(cfg.distributions.len());
    let mut margins_out = Vec::with_capacity(cfg.distributions.len());
    for (idx, family) in cfg.distributions.iter().enumerate() {
        let spec = DistributionSpec::new(*family, ms.clone(), derive_seed(cfg.seed, idx as u64));
        let x = sample(&spec, cfg.n_samples)?;
        let margins = margins_for(&net, cfg.class_index, &x)?;
        rows.push(ClassRow {
            family: family.name().to_string(),
            n: margins.len(),
            stats: margin_stats(&margins, eps)?,
        });
        margins_out.push((family.name().to_string(), margins));
    }

    Ok(ClassifyArtifacts {
        report: ClassifyReport {
            epsilon: cfg.eps,
            class_index: cfg.class_index,
            class_count: cfg.class_count,
            certificates,
            all_certified,
            applied_ridge,
            rows,
            solve_seconds,
        },
        margins: margins_out,
    })
}

/// Writes `report.json`, `stats.csv`, and `plotdata/hist_*.csv`.
pub fn write_classify_outputs(
    artifacts: &ClassifyArtifacts,
    out_dir: &Path,
) -> Result<(), AppError> {
    let io_err = |path: &Path, source: std::io::Error| AppError::Io {
        path: path.display().to_string(),
        source,
    };
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let plot_dir = out_dir.join("plotdata");
    std::fs::create_dir_all(&plot_dir).map_err(|e| io_err(&plot_dir, e))?;

    let report_path = out_dir.join("report.json");
    let json = serde_json::to_string_pretty(&artifacts.report).expect("report serializes");
    std::fs::write(&report_path, json).map_err(|e| io_err(&report_path, e))?;

    let mut stats =
        String::from("family,n_samples,mean,median,std_dev,positive_ratio,cvar\n");
    for row in &artifacts.report.rows {
        stats.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.family,
            row.n,
            io::format_f64(row.stats.mean),
            io::format_f64(row.stats.median),
            io::format_f64(row.stats.std_dev),
            io::format_f64(row.stats.positive_ratio),
            io::format_f64(row.stats.cvar),
        ));
    }
    let stats_path = out_dir.join("stats.csv");
    std::fs::write(&stats_path, stats).map_err(|e| io_err(&stats_path, e))?;

    for (family, margins) in &artifacts.margins {
        let text = histogram_csv(margins, 60);
        let p = plot_dir.join(format!("hist_{family}.csv"));
        std::fs::write(&p, text).map_err(|e| io_err(&p, e))?;
    }
    Ok(())
}

fn histogram_csv(values: &[f64], bins: usize) -> String {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = ((hi - lo) / bins as f64).max(f64::MIN_POSITIVE);
    let mut counts = vec![0usize; bins];
    for &v in values {
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let mut text = String::from("bin_left,bin_right,count\n");
    for (i, c) in counts.iter().enumerate() {
        text.push_str(&format!(
            "{},{},{}\n",
            io::format_f64(lo + i as f64 * width),
            io::format_f64(lo + (i + 1) as f64 * width),
            c
        ));
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn margins_match_by_hand() {
        // Linear 3-class scorer: f(x) = Kx exactly.
        let k = dmatrix![1.0, 0.0; 0.0, 1.0; -1.0, -1.0];
        let net = Network::linear_gain(&k, 6).unwrap();
        let x = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, -2.0, 0.5]);
        let margins = margins_for(&net, 0, &x).unwrap();
        // f(3,1) = (3, 1, -4): margin 3 − 1 = 2.
        assert!((margins[0] - 2.0).abs() < 1e-12);
        // f(-2,0.5) = (-2, 0.5, 1.5): margin −2 − 1.5 = −3.5.
        assert!((margins[1] + 3.5).abs() < 1e-12);
    }

    #[test]
    fn config_defaults() {
        let text = r#"{
            "network": "net.json",
            "class_index": 0,
            "class_count": 3,
            "moment": {"mean": [0.0, 0.0], "cov": [[0.1, 0.0],[0.0, 0.1]]}
        }"#;
        let cfg: ClassifyConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.eps, 0.2);
        assert_eq!(cfg.n_samples, 100_000);
        assert_eq!(cfg.distributions.len(), 6);
    }

    #[test]
    fn histogram_covers_all_values() {
        let values = vec![0.0, 0.5, 1.0, 1.0, 2.0];
        let text = histogram_csv(&values, 4);
        let total: usize = text
            .lines()
            .skip(1)
            .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
            .sum();
        assert_eq!(total, values.len());
    }

    #[test]
    fn ridge_applies_to_degenerate_covariance() {
        let dir = tempfile::tempdir().unwrap();
        // Rank-1 covariance from two aligned points.
        let data = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, -1.0, -1.0, 2.0, 2.0, -2.0, -2.0]);
        crate::io::write_matrix_csv(dir.path().join("cls.csv"), &data).unwrap();
        let net = Network::linear_gain(&dmatrix![1.0, 0.0; 0.0, 1.0], 4).unwrap();
        net.save(dir.path().join("net.json")).unwrap();
        let cfg = ClassifyConfig {
            network: "net.json".into(),
            class_index: 0,
            class_count: 2,
            moment: MomentConfig::Data {
                data: "cls.csv".into(),
            },
            distributions: vec![Family::Normal],
            eps: 0.2,
            n_samples: 200,
            seed: 1,
            pairwise_multipliers: false,
        };
        let artifacts = run_classification_experiment(&cfg, dir.path()).unwrap();
        assert_eq!(artifacts.report.applied_ridge, Some(CLASS_COVARIANCE_RIDGE));
    }
}
