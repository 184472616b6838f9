//! Flag/config-file merging. A flag on the command line wins over the same
//! key in `--config`, which wins over the built-in default.

use std::path::{Path, PathBuf};

use contobs::mechanisms::{BuiltinMechanism, MechanismFactory};
use contobs::wire::ExternalMechanismFactory;
use contobs::{Error, Result};
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "CONTOBS_SEED";

/// Keys accepted in a `--config` TOML file. Names match the long flags.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub mechanism: Option<String>,
    pub alpha: Option<f64>,
    pub d: Option<usize>,
    #[serde(rename = "T")]
    pub t: Option<usize>,
    pub trials: Option<u64>,
    pub confidence: Option<f64>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub instances: Option<usize>,
    pub max_d: Option<usize>,
    pub max_k: Option<usize>,
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text)
            .map_err(|e| Error::Usage(format!("config {}: {}", path.display(), e.message())))
    }
}

/// Picks the flag value, then the file value, then the default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

pub fn require<T>(flag: Option<T>, file: Option<T>, name: &str) -> Result<T> {
    flag.or(file)
        .ok_or_else(|| Error::Usage(format!("--{name} is required (flag or config key)")))
}

/// Master seed: flag, config, then `CONTOBS_SEED`, then 0.
pub fn master_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

/// A mechanism named on the command line: a built-in name, or
/// `external:<shell command>` speaking the line protocol.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum MechanismSpec {
    Builtin(BuiltinMechanism),
    External(String),
}

impl MechanismSpec {
    pub fn parse(s: &str) -> Result<MechanismSpec> {
        match s.strip_prefix("external:") {
            Some(cmd) if !cmd.trim().is_empty() => Ok(MechanismSpec::External(s.to_string())),
            Some(_) => Err(Error::Usage("external: needs a command".into())),
            None => s.parse().map(MechanismSpec::Builtin),
        }
    }

    pub fn factory(&self) -> Box<dyn MechanismFactory> {
        match self {
            MechanismSpec::Builtin(m) => Box::new(*m),
            MechanismSpec::External(s) => {
                Box::new(ExternalMechanismFactory::new(&s["external:".len()..]))
            }
        }
    }
}
