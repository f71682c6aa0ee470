//! Run configuration: built-in defaults, then the config file, then flags.

use std::fs;
use std::path::Path;

use clap::ValueEnum;
use ifthen_core::{ArchConfig, DType, Family, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Environment variable naming the default config file for `train`.
pub const CONFIG_ENV: &str = "IFTHEN_CONFIG";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl From<Precision> for DType {
    fn from(p: Precision) -> Self {
        match p {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

/// On-disk layout; every section and field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    precision: Option<Precision>,
    model: toml::Table,
    train: TrainConfig,
}

/// Fully resolved configuration for one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub precision: Precision,
    pub model: ArchConfig,
    pub train: TrainConfig,
}

/// Flag values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub arch: Option<Family>,
    pub precision: Option<Precision>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub seed: Option<u64>,
    pub max_steps: Option<u64>,
    pub validate_every: Option<u64>,
}

impl RunConfig {
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> CliResult<Self> {
        let parsed = match file {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                toml::from_str::<ConfigFile>(&text)
                    .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?
            }
            None => ConfigFile::default(),
        };
        let mut table = parsed.model;
        let from_file = match table.remove("family") {
            Some(toml::Value::String(s)) => Some(s.parse::<Family>()?),
            Some(other) => return Err(CliError::validation(format!("model.family must be a string, got {other}"))),
            None => None,
        };
        let family = match (overrides.arch, from_file) {
            (Some(a), Some(f)) if a != f => {
                return Err(CliError::validation(format!(
                    "--arch {a} conflicts with model.family = \"{f}\" in the config file"
                )))
            }
            (Some(a), _) | (None, Some(a)) => a,
            (None, None) => return Err(CliError::validation("no architecture: pass --arch or set model.family")),
        };
        table.insert("family".into(), toml::Value::String(family.as_str().into()));
        let model: ArchConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| CliError::validation(format!("model config: {e}")))?;
        model.validate()?;

        let mut train = parsed.train;
        let o = overrides;
        train.epochs = o.epochs.unwrap_or(train.epochs);
        train.batch_size = o.batch_size.unwrap_or(train.batch_size);
        train.base_lr = o.learning_rate.unwrap_or(train.base_lr);
        train.seed = o.seed.unwrap_or(train.seed);
        train.max_steps = o.max_steps.or(train.max_steps);
        train.validate_every_steps = o.validate_every.unwrap_or(train.validate_every_steps);
        train.validate()?;
        Ok(Self {
            precision: o.precision.or(parsed.precision).unwrap_or_default(),
            model,
            train,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes to TOML")
    }
}
