//! Flat run configuration.

use serde::{Deserialize, Serialize};
use shipnet_core::harness::TrainConfig;
use shipnet_core::model::{Branch, Fusion, ModelConfig};

/// Every model and training knob in one flat document. Unknown keys are
/// rejected; omitted keys take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub enable_i1: bool,
    pub enable_i2: bool,
    pub enable_i3: bool,
    pub enable_cross_attention: bool,
    pub enable_sa_module: bool,
    pub enable_drdb: bool,
    pub enable_global_residual: bool,
    pub n_drdb: usize,
    pub main_branch: Branch,
    pub fusion: Fusion,
    pub classes: usize,
    pub input_size: usize,
    pub width_divisor: usize,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub eval_batch_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        RunConfig {
            enable_i1: m.enable_i1,
            enable_i2: m.enable_i2,
            enable_i3: m.enable_i3,
            enable_cross_attention: m.enable_cross_attention,
            enable_sa_module: m.enable_sa_module,
            enable_drdb: m.enable_drdb,
            enable_global_residual: m.enable_global_residual,
            n_drdb: m.n_drdb,
            main_branch: m.main_branch,
            fusion: m.fusion,
            classes: m.classes,
            input_size: m.input_size,
            width_divisor: m.width_divisor,
            seed: m.seed,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            eval_batch_size: 32,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            enable_i1: self.enable_i1,
            enable_i2: self.enable_i2,
            enable_i3: self.enable_i3,
            enable_cross_attention: self.enable_cross_attention,
            enable_sa_module: self.enable_sa_module,
            enable_drdb: self.enable_drdb,
            enable_global_residual: self.enable_global_residual,
            n_drdb: self.n_drdb,
            main_branch: self.main_branch,
            fusion: self.fusion,
            classes: self.classes,
            input_size: self.input_size,
            width_divisor: self.width_divisor,
            seed: self.seed,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed: self.seed,
        }
    }
}
