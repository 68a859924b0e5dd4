//! Run settings shared by the flags and the TOML config file.

use std::path::Path;

use clap::{Args, ValueEnum};
use qcd_core::ocsolve::{KernelRule, Mesh, OcConfig};
use qcd_core::{ModelParams, ProcedureKind};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelName {
    Beta,
    ExpShift,
    U2b,
    ExpDouble,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProcName {
    Sr,
    SrR,
    Srp,
    Shiryaev,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeshName {
    Graded,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleName {
    CellIntegral,
    MidpointDensity,
    Linear,
}

/// Every field is optional; flags override the config file.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Settings {
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelName>,
    /// Beta model parameter.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Exponential mean-shift parameter.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[arg(long = "proc", value_enum)]
    #[serde(rename = "proc")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub procedure: Option<ProcName>,
    /// SR-r head start.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    /// Shiryaev geometric-prior parameter.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Shiryaev probability that the change precedes the data.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pi: Option<f64>,
    /// Target ARL to false alarm.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Detection threshold.
    #[arg(long = "A", visible_alias = "threshold", allow_hyphen_values = true)]
    #[serde(rename = "A")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Grid size N.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mesh: Option<MeshName>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rule: Option<RuleName>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

macro_rules! merge_fields {
    ($a:ident, $b:ident, $($f:ident),*) => { Settings { $($f: $a.$f.or($b.$f)),* } };
}

impl Settings {
    pub fn load(path: &Path) -> Result<Settings, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Domain(format!("config {}: {}", path.display(), e.message())))
    }

    /// Fields of `self` win over `other`.
    pub fn or(self, other: Settings) -> Settings {
        let a = self;
        let b = other;
        merge_fields!(a, b, model, delta, theta, procedure, r, p, pi, gamma, threshold, grid, mesh, rule, seed)
    }

    pub fn model(&self) -> Result<ModelParams, CliError> {
        let need = |v: Option<f64>, flag: &str, name: &str| {
            v.ok_or_else(|| CliError::Domain(format!("{flag}: required by --model {name}")))
        };
        let params = match self.model.ok_or_else(|| CliError::Domain("model: --model is required".into()))? {
            ModelName::Beta => ModelParams::Beta { delta: need(self.delta, "delta", "beta")? },
            ModelName::ExpShift => ModelParams::ExpShift { theta: need(self.theta, "theta", "exp-shift")? },
            ModelName::U2b => ModelParams::U2b,
            ModelName::ExpDouble => ModelParams::ExpDouble,
        };
        Ok(params)
    }

    pub fn procedure(&self) -> Result<ProcName, CliError> {
        self.procedure.ok_or_else(|| CliError::Domain("proc: --proc is required".into()))
    }

    /// Kind for every procedure except SRP, whose start needs a solver.
    pub fn fixed_kind(&self, r: Option<f64>) -> Result<ProcedureKind, CliError> {
        Ok(match self.procedure()? {
            ProcName::Sr => ProcedureKind::Sr,
            ProcName::SrR => ProcedureKind::SrR {
                r: r.or(self.r).ok_or_else(|| CliError::Domain("r: --r is required by --proc sr-r".into()))?,
            },
            ProcName::Shiryaev => ProcedureKind::Shiryaev {
                p: self.p.ok_or_else(|| CliError::Domain("p: --p is required by --proc shiryaev".into()))?,
                pi: self.pi.unwrap_or(0.0),
            },
            ProcName::Srp => return Err(CliError::Domain("proc: srp has no fixed start".into())),
        })
    }

    pub fn oc_config(&self) -> OcConfig {
        let mut c = OcConfig::default();
        if let Some(n) = self.grid {
            c.grid_n = n;
        }
        match self.mesh {
            Some(MeshName::Uniform) => c.mesh = Mesh::Uniform,
            Some(MeshName::Graded) => c.mesh = Mesh::default(),
            None => {}
        }
        if let Some(rule) = self.rule {
            c.rule = match rule {
                RuleName::CellIntegral => KernelRule::CellIntegral,
                RuleName::MidpointDensity => KernelRule::MidpointDensity,
                RuleName::Linear => KernelRule::Linear,
            };
        }
        c
    }

    pub fn target(&self) -> Result<Target, CliError> {
        match (self.gamma, self.threshold) {
            (Some(g), None) => Ok(Target::Gamma(g)),
            (None, Some(a)) => Ok(Target::Threshold(a)),
            _ => Err(CliError::Domain("gamma/A: supply exactly one of --gamma and --A".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Gamma(f64),
    Threshold(f64),
}
