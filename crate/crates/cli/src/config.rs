use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use vpstab::inequality_lab::{IntegrityConfig, LabConfig, ScanConfig};

use crate::error::{CliError, Result};

pub const DEFAULT_SCENARIOS: &str = include_str!("../configs/default.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    Steady,
    Flow,
    FirstVariation,
    Chain,
    Scan,
}

impl Check {
    pub const ALL: [Check; 5] = [Check::Steady, Check::Flow, Check::FirstVariation, Check::Chain, Check::Scan];

    pub fn name(self) -> &'static str {
        match self {
            Check::Steady => "steady",
            Check::Flow => "flow",
            Check::FirstVariation => "first-variation",
            Check::Chain => "chain",
            Check::Scan => "scan",
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Check {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Check::ALL
            .into_iter()
            .find(|c| c.name() == s.trim())
            .ok_or_else(|| format!("unknown check `{s}` (expected one of steady, flow, first-variation, chain, scan)"))
    }
}

/// Parses `--check a,b,c`; an empty string is the empty list.
pub fn parse_checks(list: &str) -> Result<Vec<Check>, String> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

pub fn parse_seeds(list: &str) -> Result<Vec<u64>, String> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<u64>().map_err(|e| format!("bad seed `{s}`: {e}")))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub checks: Vec<Check>,
    /// Family seeds of the λ-sweep.
    pub seeds: Vec<u64>,
    pub lambdas: Vec<f64>,
    /// Family seeds of the flow-integrity and first-variation checks.
    pub flow_seeds: Vec<u64>,
    /// Output subdirectory; the scenario name when absent.
    pub output: Option<PathBuf>,
    pub lab: LabConfig,
    pub integrity: IntegrityConfig,
    pub scan: ScanConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "default".into(),
            checks: Check::ALL.to_vec(),
            seeds: (1..=5).collect(),
            lambdas: vec![0.1, 0.05, 0.02, 0.01],
            flow_seeds: (1..=10).collect(),
            output: None,
            lab: LabConfig::default(),
            integrity: IntegrityConfig::default(),
            scan: ScanConfig::default(),
        }
    }
}

impl Scenario {
    pub fn has(&self, check: Check) -> bool {
        self.checks.contains(&check)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from(&self.name))
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.name.trim().is_empty() || self.name.contains(['/', '\\']) {
            return Err(format!("scenario name `{}` must be non-empty and contain no path separators", self.name));
        }
        self.lab.validate().map_err(|e| e.to_string())?;
        self.integrity.validate().map_err(|e| e.to_string())?;
        if self.lambdas.iter().any(|l| !(*l > 0.0)) {
            return Err("lambdas must be positive".into());
        }
        if self.scan.eps.iter().any(|e| !(*e > 0.0)) || !(self.scan.k > 0.0) {
            return Err("scan eps and k must be positive".into());
        }
        Ok(())
    }
}

/// Command-line adjustments applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seeds: Option<Vec<u64>>,
    pub checks: Option<Vec<Check>>,
    pub resolution_scale: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, sc: &mut Scenario) {
        if let Some(seeds) = &self.seeds {
            sc.seeds = seeds.clone();
            sc.flow_seeds = seeds.clone();
            if let Some(first) = seeds.first() {
                sc.scan.first_seed = *first;
                sc.scan.seeds = seeds.len();
            } else {
                sc.scan.seeds = 0;
            }
        }
        if let Some(checks) = &self.checks {
            sc.checks = checks.clone();
        }
        if let Some(f) = self.resolution_scale {
            sc.lab = sc.lab.with_resolution(f);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(rename = "scenario", default)]
    pub scenarios: Vec<Scenario>,
}

impl ScenarioFile {
    /// Parses and validates; `origin` only labels error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| CliError::Config {
            origin: origin.into(),
            message: e.to_string(),
        })?;
        file.validate(origin)?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            origin: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn bundled() -> Self {
        Self::parse(DEFAULT_SCENARIOS, "bundled default").expect("bundled scenario file is valid")
    }

    pub fn validate(&self, origin: &str) -> Result<()> {
        let mut seen = HashSet::new();
        for sc in &self.scenarios {
            let bad = |message: String| CliError::Config {
                origin: origin.into(),
                message: format!("scenario `{}`: {message}", sc.name),
            };
            sc.validate().map_err(bad)?;
            if !seen.insert(sc.output_dir()) {
                return Err(bad("output directory is shared with another scenario".into()));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config {
            origin: "serializer".into(),
            message: e.to_string(),
        })
    }
}
