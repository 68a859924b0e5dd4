//! The `qcd` command-line tool.
//!
//! Exit status: 0 on success, 1 when a validation suite fails, 2 on invalid
//! input, 3 on numerical failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

pub mod commands;
pub mod output;
pub mod settings;
pub mod stream;

use settings::Settings;

#[derive(Debug)]
pub enum CliError {
    Domain(String),
    Numerical(String),
    Io { path: PathBuf, message: String },
    ValidationFailed(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Domain(m) | CliError::Numerical(m) | CliError::ValidationFailed(m) => f.write_str(m),
            CliError::Io { path, message } => write!(f, "{}: {message}", path.display()),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), message: e.to_string() }
    }

    pub fn encode(e: serde_json::Error) -> Self {
        CliError::Numerical(format!("encoding output: {e}"))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ValidationFailed(_) => 1,
            CliError::Domain(_) | CliError::Io { .. } => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<qcd_core::Error> for CliError {
    fn from(e: qcd_core::Error) -> Self {
        match e {
            qcd_core::Error::Domain { .. } | qcd_core::Error::Unsupported { .. } => CliError::Domain(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "qcd", version, about = "Change-point detection: calibration, operating characteristics, online detection")]
pub struct Cli {
    /// TOML file with default settings; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file for the main report (stdout when absent).
    #[arg(long, short = 'o', global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Find the threshold with a target ARL to false alarm.
    Calibrate(CommonArgs),
    /// Operating characteristics at a threshold or target ARL.
    Oc(OcArgs),
    /// Run a procedure over observations from a file or stdin.
    Detect(DetectArgs),
    /// Large-threshold constants of a model.
    Constants(ConstantsArgs),
    /// Reproduce a worked example.
    CaseStudy {
        #[command(subcommand)]
        study: Study,
    },
    /// Cross-check the solvers against simulation and closed forms.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[command(flatten)]
    pub settings: Settings,
}

#[derive(Debug, Clone, Args)]
pub struct OcArgs {
    #[command(flatten)]
    pub settings: Settings,
    /// Use the closed-form solution (u2b model only).
    #[arg(long)]
    pub exact: bool,
    /// Geometric prior `pi,p` for the Bayesian PFA and ADD.
    #[arg(long, value_parser = parse_pair, value_name = "PI,P")]
    pub prior: Option<(f64, f64)>,
    /// Local PFA window m.
    #[arg(long)]
    pub pfa_window: Option<usize>,
    /// Last k in the local PFA profile.
    #[arg(long, default_value_t = 50)]
    pub pfa_k_max: usize,
    /// Repeat at twice the grid size and report the drift.
    #[arg(long)]
    pub richardson: bool,
    /// Write the ADD-versus-nu curve (columns nu,add).
    #[arg(long)]
    pub curve_csv: Option<PathBuf>,
    /// Write the local PFA profile (columns k,pfa).
    #[arg(long)]
    pub pfa_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub settings: Settings,
    /// Observation file, one number per line (stdin when absent).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Stop reading after this many observations.
    #[arg(long)]
    pub horizon: Option<u64>,
    /// Known change point, to label the alarm as false or true.
    #[arg(long)]
    pub change_point: Option<u64>,
    /// Write the statistic path (columns n,statistic).
    #[arg(long)]
    pub emit_trajectory: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ConstantsArgs {
    #[command(flatten)]
    pub settings: Settings,
    /// Random-walk paths for the overshoot series.
    #[arg(long, default_value_t = 1_000_000)]
    pub paths: usize,
    /// Terms summed explicitly before the geometric tail.
    #[arg(long, default_value_t = 200)]
    pub k_max: usize,
    /// Paths for the perpetuity estimates (models without closed forms).
    #[arg(long, default_value_t = 20_000)]
    pub perpetuity_paths: usize,
}

#[derive(Debug, Subcommand)]
pub enum Study {
    /// Beta-to-beta model: SR-r against SRP.
    Beta(BetaStudyArgs),
    /// Uniform-to-beta model: exact minimax curves.
    U2b(U2bStudyArgs),
    /// Exponential mean shift: SR, SR-r and SRP side by side.
    Exp(ExpStudyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct BetaStudyArgs {
    #[command(flatten)]
    pub settings: Settings,
    /// SR-r threshold, overriding calibration.
    #[arg(long)]
    pub threshold_srr: Option<f64>,
    /// SRP threshold, overriding calibration.
    #[arg(long)]
    pub threshold_srp: Option<f64>,
    /// Last nu written to the curve file.
    #[arg(long, default_value_t = 20)]
    pub nu_max: usize,
    /// Write the delay curves (columns nu,add_srr,add_srp).
    #[arg(long)]
    pub curve_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct U2bStudyArgs {
    #[arg(long, default_value_t = 50)]
    pub points: usize,
    #[arg(long, default_value_t = 1.05)]
    pub gamma_min: f64,
    #[arg(long, default_value_t = 2.2)]
    pub gamma_max: f64,
    /// Write the curves (columns gamma,jp_srr,jp_srp,jb).
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ExpStudyArgs {
    #[command(flatten)]
    pub settings: Settings,
    /// Target ARLs, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![5000.0, 7500.0, 10000.0])]
    pub gammas: Vec<f64>,
    /// Write one row per target ARL.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    /// Solver against simulation (beta model, delta = 1, A = 43, r = 2).
    Mc,
    /// Solver against the uniform-to-beta closed forms.
    U2b,
    All,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub settings: Settings,
    #[arg(long, value_enum, default_value = "all")]
    pub suite: Suite,
    /// Monte Carlo replications per metric.
    #[arg(long, default_value_t = 20_000)]
    pub reps: usize,
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected two comma-separated numbers")?;
    let p = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
    Ok((p(a)?, p(b)?))
}

/// Settings after merging flags, `QD_SEED` and the config file.
pub fn resolve(flags: &Settings, config: Option<&Path>) -> Result<Settings, CliError> {
    let file = match config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    let env_seed = match std::env::var("QD_SEED") {
        Ok(v) => Some(v.trim().parse::<u64>().map_err(|_| CliError::Domain(format!("QD_SEED: not an integer: {v:?}")))?),
        Err(_) => None,
    };
    let mut merged = flags.clone().or(file.clone());
    merged.seed = flags.seed.or(env_seed).or(file.seed);
    Ok(merged)
}

/// Parses `args` and runs the command, returning the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("qcd: {e}");
            e.exit_code()
        }
    }
}
