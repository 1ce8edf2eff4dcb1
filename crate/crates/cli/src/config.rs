//! Run configuration: a TOML file with four sections. Unknown keys are
//! rejected so typos fail loudly. Every field has a default; an empty file
//! is a valid configuration (though `train` still needs a data path from
//! the file or a flag).
//!
//! ```toml
//! [data]
//! input = "maps.wfm"      # WFM1 dataset (required for train)
//! ratios = [0.8, 0.2]     # optional split; part 1 trains, last part is held out
//! seed = 0                # shuffle seed for the split
//! stratified = true       # split each class separately
//!
//! [model]
//! variant = "2C"          # 2C | 3C | 4C conv stack
//! time_steps = 4
//! v_thr = 1.0
//! v_reset = 0.0
//! surrogate_width = 1.0
//! scd_init = 0.7
//! vd_init = 0.8
//! input_height = 36
//! input_width = 36
//! encoder_maps = 64
//! encoder_kernel = 7
//! fc_units = 256
//! # optional explicit conv stack replacing the variant's:
//! # [[model.conv]]
//! # out_channels = 128
//! # kernel = 3
//! # stride = 2
//! # padding = 0
//!
//! [train]
//! optimizer = "adam"      # adam | sgd
//! learning_rate = 0.001
//! lr_decay = 1.0
//! weight_decay = 0.0
//! batch_size = 64
//! epochs = 10
//! seed = 0
//! deterministic = true
//!
//! [output]
//! dir = "out"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;
use wafer2spike::layers::{ConvSpec, NetworkConfig};
use wafer2spike::lif::SurrogateSpec;
use wafer2spike::train::{OptimizerKind, TrainConfig};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// WFM1 dataset consumed by `train`.
    pub input: Option<PathBuf>,
    /// Split ratios; must sum to 1. With two or more parts, the first part
    /// trains and the last is held out for the post-training report.
    pub ratios: Option<Vec<f64>>,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection { input: None, ratios: None, seed: 0, stratified: true }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub variant: String,
    pub time_steps: usize,
    pub v_thr: f32,
    pub v_reset: f32,
    pub surrogate_width: f32,
    pub scd_init: f32,
    pub vd_init: f32,
    pub input_height: usize,
    pub input_width: usize,
    pub encoder_maps: usize,
    pub encoder_kernel: usize,
    pub fc_units: usize,
    /// Explicit conv stack; replaces the variant's layers when present.
    pub conv: Option<Vec<ConvSection>>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            variant: "2C".to_string(),
            time_steps: 4,
            v_thr: 1.0,
            v_reset: 0.0,
            surrogate_width: 1.0,
            scd_init: 0.7,
            vd_init: 0.8,
            input_height: 36,
            input_width: 36,
            encoder_maps: 64,
            encoder_kernel: 7,
            fc_units: 256,
            conv: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSection {
    pub out_channels: usize,
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub optimizer: String,
    pub learning_rate: f32,
    pub lr_decay: f32,
    pub weight_decay: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub deterministic: bool,
    pub adam_beta1: f32,
    pub adam_beta2: f32,
    pub adam_epsilon: f32,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            optimizer: "adam".to_string(),
            learning_rate: d.learning_rate,
            lr_decay: d.lr_decay,
            weight_decay: d.weight_decay,
            batch_size: d.batch_size,
            epochs: d.epochs,
            seed: d.seed,
            deterministic: d.deterministic,
            adam_beta1: d.adam_beta1,
            adam_beta2: d.adam_beta2,
            adam_epsilon: d.adam_epsilon,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out") }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text)
            .with_context(|| format!("invalid config file {}", path.display()))?;
        Ok(cfg)
    }

    /// Architecture from the model section: variant baseline, then field
    /// overrides, then an explicit conv stack if one is given.
    pub fn network_config(&self) -> Result<NetworkConfig> {
        let m = &self.model;
        let mut cfg = match m.variant.to_ascii_uppercase().as_str() {
            "2C" => NetworkConfig::variant_2c(),
            "3C" => NetworkConfig::variant_3c(),
            "4C" => NetworkConfig::variant_4c(),
            other => bail!("unknown model variant {other:?}; expected 2C, 3C, or 4C"),
        };
        cfg.input_height = m.input_height;
        cfg.input_width = m.input_width;
        cfg.encoder_maps = m.encoder_maps;
        cfg.encoder_kernel = m.encoder_kernel;
        cfg.fc_units = m.fc_units;
        cfg.time_steps = m.time_steps;
        cfg.v_thr = m.v_thr;
        cfg.v_reset = m.v_reset;
        cfg.scd_init = m.scd_init;
        cfg.vd_init = m.vd_init;
        if let Some(convs) = &m.conv {
            cfg.conv_layers = convs
                .iter()
                .map(|c| ConvSpec {
                    out_channels: c.out_channels,
                    kernel: c.kernel,
                    stride: c.stride,
                    padding: c.padding,
                })
                .collect();
        }
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let optimizer = match t.optimizer.to_ascii_lowercase().as_str() {
            "adam" => OptimizerKind::Adam,
            "sgd" => OptimizerKind::Sgd,
            other => bail!("unknown optimizer {other:?}; expected adam or sgd"),
        };
        let surrogate = SurrogateSpec::new(self.model.surrogate_width)
            .map_err(|e| anyhow!("surrogate_width: {e}"))?;
        Ok(TrainConfig {
            time_steps: self.model.time_steps,
            learning_rate: t.learning_rate,
            lr_decay: t.lr_decay,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: t.seed,
            optimizer,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_epsilon: t.adam_epsilon,
            surrogate,
            deterministic: t.deterministic,
        })
    }
}
