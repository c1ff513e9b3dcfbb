//! TOML run configurations. Unknown keys are rejected everywhere, and every
//! section validates before any compute starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use octmix::augment::AugPolicy;
use octmix::dataset::{SplitSpec, SynthSpec, WindowingSpec};
use octmix::error::Error;

use crate::CliError;

/// Where the recordings come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic,
    Manifest,
}

fn default_windowing() -> WindowingSpec {
    WindowingSpec {
        frame: 256,
        stride: 256,
        trim_s: 0.0,
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub source: DataSource,
    pub manifest: Option<PathBuf>,
    pub synthetic: Option<SynthSpec>,
    #[serde(default = "default_windowing")]
    pub windowing: WindowingSpec,
}

impl DatasetSection {
    pub fn validate(&self) -> Result<(), CliError> {
        self.windowing.validate().map_err(CliError::config)?;
        match self.source {
            DataSource::Manifest => {
                let path = self.manifest.as_ref().ok_or_else(|| {
                    CliError::Config("dataset.source = \"manifest\" needs dataset.manifest".into())
                })?;
                if !path.exists() {
                    return Err(CliError::Config(format!(
                        "dataset.manifest {} does not exist",
                        path.display()
                    )));
                }
            }
            DataSource::Synthetic => {
                let spec = self.synthetic.as_ref().ok_or_else(|| {
                    CliError::Config(
                        "dataset.source = \"synthetic\" needs a [dataset.synthetic] table".into(),
                    )
                })?;
                spec.validate().map_err(CliError::config)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub channel_widths: Vec<usize>,
    #[serde(default = "default_kernel_size")]
    pub kernel_size: usize,
}

fn default_kernel_size() -> usize {
    3
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub variant: Option<String>,
    #[serde(default = "default_epochs")]
    pub pretrain_epochs: usize,
    #[serde(default = "default_epochs")]
    pub classifier_epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub policies: Vec<AugPolicy>,
    /// Optional sweep axis: run the whole trial loop once per training
    /// subject count, overriding `split.n_train_subjects`.
    #[serde(default)]
    pub subject_counts: Vec<usize>,
}

fn default_epochs() -> usize {
    300
}

fn default_batch_size() -> usize {
    64
}

fn default_lr() -> f64 {
    0.001
}

fn default_trials() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFileConfig {
    pub dataset: DatasetSection,
    pub split: SplitSpec,
    pub model: ModelSection,
    pub train: TrainSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSynthFileConfig {
    pub synthetic: SynthSpec,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSection {
    pub seed: u64,
    pub policy: AugPolicy,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentFileConfig {
    pub dataset: DatasetSection,
    pub augment: AugmentSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub model_dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalFileConfig {
    pub eval: EvalSection,
    pub dataset: DatasetSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_cutoffs")]
    pub cutoffs_hz: Vec<f64>,
}

fn default_alphas() -> Vec<f64> {
    vec![0.5, 1.0, 5.0]
}

fn default_cutoffs() -> Vec<f64> {
    vec![0.1, 1.1, 2.1, 3.1, 4.1, 5.1]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFileConfig {
    pub dataset: DatasetSection,
    pub split: SplitSpec,
    pub model: ModelSection,
    pub train: TrainSection,
    pub sweep: SweepSection,
    pub output: OutputSection,
}

/// Parses one TOML config file; unknown keys are config errors.
pub fn load_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::Config(format!("cannot read config {}: {e}", path.display()))
    })?;
    toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
}

/// Flag/environment overrides applied after the file is parsed.
/// Precedence: flag, then `OCTMIX_OUT_DIR`, then the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
}

impl Overrides {
    pub fn output_dir(&self, from_config: &Path) -> PathBuf {
        if let Some(out) = &self.out {
            return out.clone();
        }
        if let Ok(env_dir) = std::env::var("OCTMIX_OUT_DIR") {
            if !env_dir.is_empty() {
                return PathBuf::from(env_dir);
            }
        }
        from_config.to_path_buf()
    }
}

impl CliError {
    pub fn config(e: Error) -> Self {
        CliError::Config(e.to_string())
    }

    pub fn runtime(e: Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
