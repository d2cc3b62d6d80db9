use std::fs;
use std::path::{Path, PathBuf};

use otflow_core::datasets::GaussianScheduleConfig;
use otflow_core::joint_training::TrainConfig;
use otflow_core::models::ArchitectureConfig;
use otflow_core::ot::SinkhornConfig;
use otflow_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// File name of the resolved configuration inside dataset and run directories.
pub const RESOLVED_CONFIG: &str = "config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetBlock {
    pub generator: GaussianScheduleConfig,
    /// Training keeps frames `0, stride, 2 stride, ...`; the rest are held out.
    pub subsample_stride: usize,
}

impl Default for DatasetBlock {
    fn default() -> Self {
        Self {
            generator: GaussianScheduleConfig::default(),
            subsample_stride: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationBlock {
    /// Solver settings for the Wasserstein interpolation baseline.
    pub interp: SinkhornConfig,
}

impl Default for EvaluationBlock {
    fn default() -> Self {
        Self {
            interp: SinkhornConfig::barycenter_for_grid(32, 32, 1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetBlock,
    pub architecture: ArchitectureConfig,
    pub training: TrainConfig,
    pub evaluation: EvaluationBlock,
    pub output: PathBuf,
    /// Seeds model initialization; copied into `training.seed` on resolution.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetBlock::default(),
            architecture: ArchitectureConfig::default(),
            training: TrainConfig::default(),
            evaluation: EvaluationBlock::default(),
            output: PathBuf::from("runs/default"),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Reads a config file; `None` yields the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::parse(&text).map_err(|e| match e {
            Error::InvalidConfig(m) => Error::InvalidConfig(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.generator.validate()?;
        if self.dataset.subsample_stride == 0 {
            return Err(Error::InvalidConfig("dataset.subsample_stride must be >= 1".into()));
        }
        self.architecture.validate()?;
        self.training.validate()?;
        self.evaluation.interp.validate()
    }

    pub fn resolve(mut self) -> Result<Self> {
        self.training.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self)?;
        fs::write(dir.join(RESOLVED_CONFIG), text + "\n")?;
        Ok(())
    }

    pub fn read_resolved(dir: &Path) -> Result<Self> {
        Self::load(Some(&dir.join(RESOLVED_CONFIG)))
    }
}
