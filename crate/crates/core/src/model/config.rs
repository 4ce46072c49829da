use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Input branch: I1 = |S_VH|, I2 = |S_VV|, I3 = |S_VV · S_VH*|.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    I1,
    I2,
    I3,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::I1, Branch::I2, Branch::I3];

    pub fn index(self) -> usize {
        match self {
            Branch::I1 => 0,
            Branch::I2 => 1,
            Branch::I3 => 2,
        }
    }

    /// 1-based number used in parameter names (`enc1`, `xattn3`, ...).
    pub fn number(self) -> usize {
        self.index() + 1
    }
}

/// How gated branch features are merged before fusion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    Concat,
    Add,
}

/// Every architectural toggle of the classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
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
    /// Square input side; must be a multiple of 16 (four stride-2 pools).
    pub input_size: usize,
    /// Divides every channel width and the fc1 width (1, 2, 4 or 8).
    pub width_divisor: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            enable_i1: true,
            enable_i2: true,
            enable_i3: true,
            enable_cross_attention: true,
            enable_sa_module: true,
            enable_drdb: true,
            enable_global_residual: true,
            n_drdb: 3,
            main_branch: Branch::I2,
            fusion: Fusion::Concat,
            classes: 6,
            input_size: 256,
            width_divisor: 1,
            seed: 0,
        }
    }
}

pub const ENCODER_WIDTHS: [usize; 4] = [8, 16, 32, 64];
pub const FC_HIDDEN: usize = 1024;
pub const MAX_DRDB: usize = 5;

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.branches().is_empty() {
            return err("all branches disabled".into());
        }
        if !self.is_enabled(self.main_branch) {
            return err(format!("main branch {:?} is not enabled", self.main_branch));
        }
        if !(1..=MAX_DRDB).contains(&self.n_drdb) {
            return err(format!("n_drdb must be in 1..={MAX_DRDB}, got {}", self.n_drdb));
        }
        if self.classes < 2 {
            return err(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.input_size < 16 || !self.input_size.is_multiple_of(16) {
            return err(format!(
                "input_size must be a positive multiple of 16, got {}",
                self.input_size
            ));
        }
        if ![1, 2, 4, 8].contains(&self.width_divisor) {
            return err(format!(
                "width_divisor must be 1, 2, 4 or 8, got {}",
                self.width_divisor
            ));
        }
        Ok(())
    }

    pub fn is_enabled(&self, b: Branch) -> bool {
        match b {
            Branch::I1 => self.enable_i1,
            Branch::I2 => self.enable_i2,
            Branch::I3 => self.enable_i3,
        }
    }

    /// Enabled branches in I1, I2, I3 order.
    pub fn branches(&self) -> Vec<Branch> {
        Branch::ALL.into_iter().filter(|&b| self.is_enabled(b)).collect()
    }

    pub fn branch_mask(&self) -> [bool; 3] {
        Branch::ALL.map(|b| self.is_enabled(b))
    }

    /// Enabled branches that are gated by cross-attention against the main
    /// branch. Empty when cross-attention is off.
    pub fn gated_branches(&self) -> Vec<Branch> {
        if !self.enable_cross_attention {
            return Vec::new();
        }
        self.branches()
            .into_iter()
            .filter(|&b| b != self.main_branch)
            .collect()
    }

    pub fn encoder_widths(&self) -> [usize; 4] {
        ENCODER_WIDTHS.map(|w| w / self.width_divisor)
    }

    /// Channel width of encoder outputs and of every fusion-stage map.
    pub fn feature_width(&self) -> usize {
        ENCODER_WIDTHS[3] / self.width_divisor
    }

    pub fn fc_hidden(&self) -> usize {
        FC_HIDDEN / self.width_divisor
    }

    /// Spatial side after the encoder.
    pub fn terminal_size(&self) -> usize {
        self.input_size / 16
    }

    /// Channels of the merged PCCAF output.
    pub fn fused_width(&self) -> usize {
        match self.fusion {
            Fusion::Concat => self.feature_width() * self.branches().len(),
            Fusion::Add => self.feature_width(),
        }
    }

    pub fn flatten_width(&self) -> usize {
        self.feature_width() * self.terminal_size() * self.terminal_size()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_matches_encoder_chain() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.encoder_widths(), [8, 16, 32, 64]);
        assert_eq!(c.terminal_size(), 16);
        assert_eq!(c.fused_width(), 192);
        assert_eq!(c.flatten_width(), 16384);
    }

    #[test]
    fn rejects_inconsistent_configs() {
        let mut c = ModelConfig {
            enable_i2: false,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.main_branch = Branch::I1;
        c.validate().unwrap();
        let c224 = ModelConfig { input_size: 224, ..Default::default() };
        c224.validate().unwrap();
        assert_eq!(c224.terminal_size(), 14);
        for bad in [
            ModelConfig { n_drdb: 0, ..Default::default() },
            ModelConfig { n_drdb: 6, ..Default::default() },
            ModelConfig { input_size: 200, ..Default::default() },
            ModelConfig { width_divisor: 3, ..Default::default() },
            ModelConfig {
                enable_i1: false,
                enable_i2: false,
                enable_i3: false,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }
}
