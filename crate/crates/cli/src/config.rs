//! Optional TOML configuration supplying values for omitted options.
//!
//! One table per subcommand; keys are the long option names with dashes
//! replaced by underscores. Options given on the command line always win.
//! Unknown tables or keys are rejected so typos surface as errors.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

use crate::Mode;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub gen: GenSection,
    #[serde(default)]
    pub env: EnvSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub validate: ValidateSection,
    #[serde(default)]
    pub backdoors: BackdoorsSection,
    #[serde(default)]
    pub suite: SuiteSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSection {
    pub dim: Option<usize>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub scm: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub data: Option<PathBuf>,
    pub anchor: Option<String>,
    pub with_t: Option<bool>,
    pub envs: Option<u32>,
    pub seed: Option<u64>,
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub data: Option<PathBuf>,
    pub mode: Option<Mode>,
    pub pvalue: Option<f64>,
    pub k: Option<usize>,
    pub runs: Option<usize>,
    pub seed: Option<u64>,
    pub scm: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSection {
    pub graphs: Option<usize>,
    pub max_obs: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackdoorsSection {
    pub graph: Option<PathBuf>,
    pub parents: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSection {
    pub n: Option<usize>,
    pub runs: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Reads and parses a config file.
pub fn load(path: &Path) -> Result<ConfigFile> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
