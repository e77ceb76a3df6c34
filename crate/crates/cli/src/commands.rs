use crate::manifest::RunManifest;
use crate::CommonArgs;
use anyhow::{anyhow, Context};
use clap::Args;
use nalgebra::{DMatrix, DVector};
use riskcert::applications::{
    reachability::MomentConfig, run_classification_experiment, run_reachability_experiment,
    AppError, ClassifyConfig, DistributionSpec, Family, ReachConfig,
};
use riskcert::io;
use riskcert::network::Network;
use riskcert::qc::{
    classification_qc, input_qc_ellipsoid, input_qc_halfspace, safety_qc_ellipsoid,
    safety_qc_halfspace, ClassificationMode, ClassificationQc, InputGeometry, InputQc, SafetyQc,
    SafetyProvenance,
};
use riskcert::risk::{self, MomentSet, QuadraticLoss, RiskLevel, RiskError};
use riskcert::sdp::SdpError;
use riskcert::verifier::{
    certificate_json, verify, CertStatus, SafetySpec, VerifierError, VerifyOptions,
};
use serde::Deserialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

/// Error carrying its CLI exit code: 2 for configuration/parse problems,
/// 3 for solver failures.
#[derive(Debug)]
pub struct CliError {
    inner: anyhow::Error,
    code: u8,
}

impl CliError {
    pub fn config(err: impl Into<anyhow::Error>) -> Self {
        CliError {
            inner: err.into(),
            code: 2,
        }
    }

    pub fn solver(err: impl Into<anyhow::Error>) -> Self {
        CliError {
            inner: err.into(),
            code: 3,
        }
    }

    pub fn exit_code(&self) -> u8 {
        self.code
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.inner)
    }
}

impl From<io::IoError> for CliError {
    fn from(e: io::IoError) -> Self {
        CliError::config(e)
    }
}

impl From<RiskError> for CliError {
    fn from(e: RiskError) -> Self {
        match e {
            RiskError::SolverFailure { .. } | RiskError::Unbounded | RiskError::Sdp(_) => {
                CliError::solver(e)
            }
            other => CliError::config(other),
        }
    }
}

impl From<VerifierError> for CliError {
    fn from(e: VerifierError) -> Self {
        match e {
            VerifierError::Solver { .. }
            | VerifierError::Numerical(_)
            | VerifierError::Unbounded
            | VerifierError::Sdp(_) => CliError::solver(e),
            VerifierError::Risk(r) => CliError::from(r),
            other => CliError::config(other),
        }
    }
}

impl From<AppError> for CliError {
    fn from(e: AppError) -> Self {
        match e {
            AppError::Risk(r) => CliError::from(r),
            AppError::Verifier(v) => CliError::from(v),
            AppError::Io { .. } => CliError::solver(anyhow!("{e}")),
            other => CliError::config(other),
        }
    }
}

impl From<SdpError> for CliError {
    fn from(e: SdpError) -> Self {
        CliError::solver(e)
    }
}

fn configure_jobs(common: &CommonArgs) {
    if let Some(jobs) = common.jobs {
        // Ignore the error from configuring twice (tests call run_* directly).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global();
    }
}

fn verify_options(common: &CommonArgs) -> VerifyOptions {
    let mut opts = VerifyOptions::default();
    if let Some(t) = common.tol_feas {
        opts.tol_feas = t;
    }
    if let Some(t) = common.tol_psd {
        opts.tol_psd = t;
    }
    opts
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<(T, Vec<u8>), CliError> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("cannot read config {}", path.display()))
        .map_err(CliError::config)?;
    let cfg = serde_json::from_slice(&bytes)
        .with_context(|| format!("invalid config {}", path.display()))
        .map_err(CliError::config)?;
    Ok((cfg, bytes))
}

// ---------------------------------------------------------------- cvar ----

#[derive(Args, Debug)]
pub struct CvarArgs {
    /// Mean vector file (CSV or JSON).
    #[arg(long)]
    pub mean: PathBuf,
    /// Covariance matrix file (CSV or JSON).
    #[arg(long)]
    pub cov: PathBuf,
    /// Quadratic term Π: a matrix file, "invcov" for Σ⁻¹, or "zero".
    #[arg(long, default_value = "zero")]
    pub quad: String,
    /// Linear term θ file; defaults to zero.
    #[arg(long)]
    pub lin: Option<PathBuf>,
    /// Constant term ρ.
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
    /// Risk level ε in (0,1).
    #[arg(long)]
    pub eps: f64,
    #[command(flatten)]
    pub common: CommonArgs,
}

pub fn run_cvar(args: CvarArgs) -> Result<ExitCode, CliError> {
    let start = Instant::now();
    let mean = io::read_vector_auto(&args.mean)?;
    let cov = io::read_matrix_auto(&args.cov)?;
    let ms = MomentSet::new(mean, cov)?;
    let eps = RiskLevel::new(args.eps)
        .map_err(|_| CliError::config(anyhow!("risk level must be in (0,1), got {}", args.eps)))?;

    let n = ms.dim();
    let quad = match args.quad.as_str() {
        "zero" => DMatrix::zeros(n, n),
        "invcov" => ms.inverse_covariance()?,
        path => io::read_matrix_auto(Path::new(path))?,
    };
    let lin = match &args.lin {
        Some(p) => io::read_vector_auto(p)?,
        None => DVector::zeros(n),
    };
    let loss = QuadraticLoss::new(quad, lin, args.rho)?;
    let result = risk::wc_cvar_quadratic(&loss, &ms, eps)?;

    let out = serde_json::json!({
        "value": result.value,
        "beta": result.beta,
        "epsilon": args.eps,
        "iterations": result.report.iterations,
        "solve_time": result.report.solve_time,
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("json"));

    if let Some(dir) = &args.common.out {
        let mut manifest = RunManifest::new(
            "cvar",
            format!("{args:?}").as_bytes(),
            args.common.seed.unwrap_or(0),
        );
        manifest.push_solve("wc_cvar", result.report.solve_time);
        manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
        manifest
            .write(dir)
            .map_err(|e| CliError::solver(anyhow!("cannot write manifest: {e}")))?;
        std::fs::write(
            dir.join("cvar.json"),
            serde_json::to_string_pretty(&out).expect("json"),
        )
        .map_err(|e| CliError::solver(anyhow!("cannot write cvar.json: {e}")))?;
    }
    Ok(ExitCode::SUCCESS)
}

// -------------------------------------------------------------- verify ----

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Verification problem description (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Deserialize)]
struct VerifyConfigFile {
    network: String,
    moment: MomentConfig,
    eps: f64,
    #[serde(default)]
    input: InputSpecConfig,
    safety: SafetySpecConfig,
    #[serde(default)]
    pairwise_multipliers: bool,
}

#[derive(Debug, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case")]
enum InputSpecConfig {
    /// The tight risk ellipsoid of the moment set (the default).
    #[default]
    Ellipsoid,
    Halfspace {
        a: Vec<f64>,
        b: f64,
    },
    Polytope {
        faces: Vec<FaceConfig>,
    },
    Custom {
        p: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Deserialize)]
struct FaceConfig {
    a: Vec<f64>,
    b: f64,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum SafetySpecConfig {
    Ellipsoid {
        shape: Vec<Vec<f64>>,
        /// Output map y = C[x; f]; defaults to selecting f.
        #[serde(default)]
        c: Option<Vec<Vec<f64>>>,
    },
    Halfspace {
        a: Vec<f64>,
        b: f64,
    },
    Classification {
        class: usize,
        count: usize,
        #[serde(default)]
        coupled: bool,
    },
    Custom {
        s: Vec<Vec<f64>>,
    },
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, CliError> {
    if rows.is_empty() || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(CliError::config(anyhow!("empty or ragged matrix in config")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), rows[0].len(), &flat))
}

fn build_input_qcs(
    spec: &InputSpecConfig,
    ms: &MomentSet,
    eps: RiskLevel,
) -> Result<Vec<InputQc>, CliError> {
    Ok(match spec {
        InputSpecConfig::Ellipsoid => vec![input_qc_ellipsoid(ms, eps).map_err(riskcert_qc_err)?],
        InputSpecConfig::Halfspace { a, b } => {
            vec![
                input_qc_halfspace(&DVector::from_column_slice(a), *b, ms, eps)
                    .map_err(riskcert_qc_err)?
                    .qc,
            ]
        }
        InputSpecConfig::Polytope { faces } => {
            let parsed: Vec<(DVector<f64>, f64)> = faces
                .iter()
                .map(|f| (DVector::from_column_slice(&f.a), f.b))
                .collect();
            riskcert::qc::input_qc_polytope(&parsed, ms, eps)
                .map_err(riskcert_qc_err)?
                .into_iter()
                .map(|h| h.qc)
                .collect()
        }
        InputSpecConfig::Custom { p } => vec![InputQc::from_matrix(
            rows_to_matrix(p)?,
            InputGeometry::Custom,
        )
        .map_err(riskcert_qc_err)?],
    })
}

fn riskcert_qc_err(e: riskcert::qc::QcError) -> CliError {
    CliError::config(e)
}

fn build_safety_specs(
    spec: &SafetySpecConfig,
    net: &Network,
) -> Result<Vec<SafetySpec>, CliError> {
    let n = net.input_dim();
    let m = net.output_dim();
    Ok(match spec {
        SafetySpecConfig::Ellipsoid { shape, c } => {
            let e = rows_to_matrix(shape)?;
            let c = match c {
                Some(rows) => rows_to_matrix(rows)?,
                None => {
                    let mut sel = DMatrix::zeros(m, n + m);
                    sel.view_mut((0, n), (m, m))
                        .copy_from(&DMatrix::identity(m, m));
                    sel
                }
            };
            vec![SafetySpec::Fixed(
                safety_qc_ellipsoid(&e, &c, n).map_err(riskcert_qc_err)?,
            )]
        }
        SafetySpecConfig::Halfspace { a, b } => vec![SafetySpec::Fixed(
            safety_qc_halfspace(&DVector::from_column_slice(a), *b, n)
                .map_err(riskcert_qc_err)?,
        )],
        SafetySpecConfig::Classification {
            class,
            count,
            coupled,
        } => {
            let mode = if *coupled {
                ClassificationMode::Coupled
            } else {
                ClassificationMode::PerHyperplane
            };
            match classification_qc(*class, *count, n, mode).map_err(riskcert_qc_err)? {
                ClassificationQc::PerHyperplane(qcs) => {
                    qcs.into_iter().map(SafetySpec::Fixed).collect()
                }
                ClassificationQc::Coupled(c) => vec![SafetySpec::CoupledClassification(c)],
            }
        }
        SafetySpecConfig::Custom { s } => {
            let mat = rows_to_matrix(s)?;
            vec![SafetySpec::Fixed(
                SafetyQc::from_matrix(mat, n, m, SafetyProvenance::Custom)
                    .map_err(riskcert_qc_err)?,
            )]
        }
    })
}

pub fn run_verify(args: VerifyArgs) -> Result<ExitCode, CliError> {
    let start = Instant::now();
    configure_jobs(&args.common);
    let (cfg, bytes) = read_config::<VerifyConfigFile>(&args.config)?;
    let base = args.config.parent().unwrap_or(Path::new("."));
    let net = Network::load(base.join(&cfg.network)).map_err(CliError::config)?;
    let ms = cfg.moment.build(base)?;
    let eps = RiskLevel::new(cfg.eps)?;
    let mut options = verify_options(&args.common);
    options.pairwise_multipliers = cfg.pairwise_multipliers;

    let inputs = build_input_qcs(&cfg.input, &ms, eps)?;
    let specs = build_safety_specs(&cfg.safety, &net)?;

    let mut certificates = Vec::with_capacity(specs.len());
    let mut all_certified = true;
    for spec in &specs {
        let cert = verify(&net, &inputs, spec, &ms, eps, &options)?;
        all_certified &= cert.status == CertStatus::Certified;
        certificates.push(certificate_json(&cert, None));
    }

    let body = if certificates.len() == 1 {
        serde_json::to_string_pretty(&certificates[0]).expect("json")
    } else {
        serde_json::to_string_pretty(&certificates).expect("json")
    };
    println!("{body}");

    if let Some(dir) = &args.common.out {
        let mut manifest = RunManifest::new("verify", &bytes, args.common.seed.unwrap_or(0));
        for (i, c) in certificates.iter().enumerate() {
            manifest.push_solve(format!("verify[{i}]"), c.solve_time);
        }
        manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
        manifest
            .write(dir)
            .map_err(|e| CliError::solver(anyhow!("cannot write manifest: {e}")))?;
        std::fs::write(dir.join("certificate.json"), &body)
            .map_err(|e| CliError::solver(anyhow!("cannot write certificate: {e}")))?;
    }

    Ok(if all_certified {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(4)
    })
}

// --------------------------------------------------------------- reach ----

#[derive(Args, Debug)]
pub struct ReachArgs {
    /// Reachability experiment description (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

pub fn run_reach(args: ReachArgs) -> Result<ExitCode, CliError> {
    let start = Instant::now();
    configure_jobs(&args.common);
    let out = args
        .common
        .out
        .clone()
        .ok_or_else(|| CliError::config(anyhow!("reach requires --out <dir>")))?;
    let (mut cfg, bytes) = read_config::<ReachConfig>(&args.config)?;
    if let Some(seed) = args.common.seed {
        cfg.seed = seed;
    }
    let base = args.config.parent().unwrap_or(Path::new("."));
    let artifacts = run_reachability_experiment(&cfg, base)?;
    riskcert::applications::reachability::write_reach_outputs(&artifacts, &out)?;

    let mut manifest = RunManifest::new("reach", &bytes, cfg.seed);
    for level in &artifacts.report.levels {
        manifest.push_solve(format!("min_volume_ellipsoid[eps={}]", level.epsilon), level.solve_seconds);
    }
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    manifest
        .write(&out)
        .map_err(|e| CliError::solver(anyhow!("cannot write manifest: {e}")))?;
    println!(
        "reach: {} levels written to {}",
        artifacts.report.levels.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

// ------------------------------------------------------------ classify ----

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    /// Classification experiment description (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

pub fn run_classify(args: ClassifyArgs) -> Result<ExitCode, CliError> {
    let start = Instant::now();
    configure_jobs(&args.common);
    let out = args
        .common
        .out
        .clone()
        .ok_or_else(|| CliError::config(anyhow!("classify requires --out <dir>")))?;
    let (mut cfg, bytes) = read_config::<ClassifyConfig>(&args.config)?;
    if let Some(seed) = args.common.seed {
        cfg.seed = seed;
    }
    let base = args.config.parent().unwrap_or(Path::new("."));
    let artifacts = run_classification_experiment(&cfg, base)?;
    riskcert::applications::classification::write_classify_outputs(&artifacts, &out)?;

    let mut manifest = RunManifest::new("classify", &bytes, cfg.seed);
    for (i, c) in artifacts.report.certificates.iter().enumerate() {
        manifest.push_solve(format!("verify[margin {i}]"), c.solve_time);
    }
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    manifest
        .write(&out)
        .map_err(|e| CliError::solver(anyhow!("cannot write manifest: {e}")))?;
    println!(
        "classify: {} distributions, certified = {}, written to {}",
        artifacts.report.rows.len(),
        artifacts.report.all_certified,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

// -------------------------------------------------------------- sample ----

#[derive(Args, Debug)]
pub struct SampleArgs {
    /// Family: uniform, normal, student_t, weibull, lognormal, powerlaw.
    #[arg(long)]
    pub family: String,
    /// Degrees of freedom (student_t).
    #[arg(long)]
    pub df: Option<f64>,
    /// Shape (weibull).
    #[arg(long)]
    pub shape: Option<f64>,
    /// Log-scale sigma (lognormal).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Tail index (powerlaw).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Mean vector file.
    #[arg(long)]
    pub mean: PathBuf,
    /// Covariance matrix file.
    #[arg(long)]
    pub cov: PathBuf,
    /// Number of samples.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[command(flatten)]
    pub common: CommonArgs,
}

fn parse_family(args: &SampleArgs) -> Result<Family, CliError> {
    let fam = match args.family.as_str() {
        "uniform" => Family::Uniform,
        "normal" => Family::Normal,
        "student_t" => Family::StudentT {
            df: args.df.unwrap_or(5.0),
        },
        "weibull" => Family::Weibull {
            shape: args.shape.unwrap_or(1.5),
        },
        "lognormal" => Family::Lognormal {
            sigma: args.sigma.unwrap_or(0.5),
        },
        "powerlaw" => Family::Powerlaw {
            alpha: args.alpha.unwrap_or(4.5),
        },
        other => {
            return Err(CliError::config(anyhow!(
                "unknown family {other:?}; expected uniform, normal, student_t, weibull, lognormal, or powerlaw"
            )))
        }
    };
    Ok(fam)
}

pub fn run_sample(args: SampleArgs) -> Result<ExitCode, CliError> {
    let start = Instant::now();
    let family = parse_family(&args)?;
    let mean = io::read_vector_auto(&args.mean)?;
    let cov = io::read_matrix_auto(&args.cov)?;
    let ms = MomentSet::new(mean, cov)?;
    let seed = args.common.seed.unwrap_or(0);
    let spec = DistributionSpec::new(family, ms, seed);
    let samples = riskcert::applications::sample(&spec, args.n)?;
    let csv = io::matrix_to_csv(&samples);

    match &args.common.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)
                .map_err(|e| CliError::solver(anyhow!("cannot create {}: {e}", dir.display())))?;
            std::fs::write(dir.join("samples.csv"), &csv)
                .map_err(|e| CliError::solver(anyhow!("cannot write samples: {e}")))?;
            let mut manifest = RunManifest::new("sample", format!("{args:?}").as_bytes(), seed);
            manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
            manifest
                .write(dir)
                .map_err(|e| CliError::solver(anyhow!("cannot write manifest: {e}")))?;
        }
        None => print!("{csv}"),
    }
    Ok(ExitCode::SUCCESS)
}
