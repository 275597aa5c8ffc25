//! The run configuration: one TOML file covering every stage.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use tom_core::dataset::{DistractorMode, Visibility};
use tom_core::experiments::ExperimentConfig;
use tom_core::planner::{PomcpConfig, DEFAULT_MAX_STEPS};
use tom_core::training::TrainConfig;
use tom_core::MapGenParams;

pub const OUT_ENV: &str = "TOM_SYNERGY_OUT";
pub const DEFAULT_OUT: &str = "tom-out";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapsConfig {
    pub train: usize,
    pub test: usize,
    pub generator: MapGenParams,
}

impl Default for MapsConfig {
    fn default() -> Self {
        MapsConfig {
            train: 300,
            test: 10,
            generator: MapGenParams::default(),
        }
    }
}

/// How `gen-data` draws samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(with = "display")]
    pub mode: DistractorMode,
    pub visibility: Visibility,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            mode: DistractorMode::Random,
            visibility: Visibility::Any,
        }
    }
}

mod display {
    use std::fmt::Display;
    use std::str::FromStr;

    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<T: Display, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<T, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        String::deserialize(d)?.parse().map_err(D::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory; falls back to `$TOM_SYNERGY_OUT`, then `tom-out`.
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub maps: MapsConfig,
    pub planner: PomcpConfig,
    pub max_steps: usize,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: None,
            jobs: 0,
            maps: MapsConfig::default(),
            planner: PomcpConfig::default(),
            max_steps: DEFAULT_MAX_STEPS,
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn emit(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }
}
