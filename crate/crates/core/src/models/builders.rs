use serde::{Deserialize, Serialize};

use super::graph::{GraphBuilder, ModelGraph};
use super::ModelSpec;
use crate::error::{Error, Result};

/// Inverted-residual blocks per CPM stage.
pub const CPM_BLOCKS: [usize; 3] = [2, 3, 3];

/// Kernel sizes of the two convs in each CPR block, stage by stage.
pub const CPR_STAGE_KERNELS: [[(usize, usize); 2]; 3] = [[(3, 3), (3, 3)], [(3, 1), (1, 1)], [(1, 1), (1, 1)]];

fn default_classes() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpmConfig {
    pub base_channels: usize,
    #[serde(default = "CpmConfig::default_expansion")]
    pub expansion_rate: usize,
    #[serde(default = "CpmConfig::default_multiplier")]
    pub channels_multiplier: f32,
    #[serde(default = "default_classes")]
    pub n_classes: usize,
}

impl CpmConfig {
    fn default_expansion() -> usize {
        3
    }

    fn default_multiplier() -> f32 {
        2.3
    }

    /// The 32-channel student.
    pub fn student() -> Self {
        Self::with_base(32)
    }

    pub fn with_base(base_channels: usize) -> Self {
        CpmConfig {
            base_channels,
            expansion_rate: 3,
            channels_multiplier: 2.3,
            n_classes: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 4 {
            return Err(Error::Config(format!("cpm base_channels {} < 4", self.base_channels)));
        }
        if self.expansion_rate < 1 {
            return Err(Error::Config("cpm expansion_rate must be >= 1".into()));
        }
        if !(self.channels_multiplier >= 1.0) || !self.channels_multiplier.is_finite() {
            return Err(Error::Config(format!(
                "cpm channels_multiplier {} < 1",
                self.channels_multiplier
            )));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("n_classes must be >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CprConfig {
    pub base_channels: usize,
    #[serde(default = "default_classes")]
    pub n_classes: usize,
}

impl CprConfig {
    pub fn with_base(base_channels: usize) -> Self {
        CprConfig {
            base_channels,
            n_classes: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 4 {
            return Err(Error::Config(format!("cpr base_channels {} < 4", self.base_channels)));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("n_classes must be >= 2".into()));
        }
        Ok(())
    }
}

/// Two strided conv-BN-ReLU layers, pooling and a linear classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub channels: usize,
    #[serde(default = "default_classes")]
    pub n_classes: usize,
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels < 1 || self.n_classes < 2 {
            return Err(Error::Config("baseline needs channels >= 1 and n_classes >= 2".into()));
        }
        Ok(())
    }
}

pub fn build_cpm(cfg: &CpmConfig, seed: u64) -> Result<ModelGraph> {
    cfg.validate()?;
    let bc = cfg.base_channels;
    let mut g = GraphBuilder::new(seed);
    let stem = bc / 2;
    let mut x = g.conv_bn("stem.0", 0, 1, stem, 3, 2, 1, true);
    x = g.conv_bn("stem.1", x, stem, bc, 3, 2, 1, true);

    let widths = [bc, bc, (bc as f32 * cfg.channels_multiplier).round() as usize];
    let mut cin = bc;
    for (s, (&w, &blocks)) in widths.iter().zip(CPM_BLOCKS.iter()).enumerate() {
        for b in 0..blocks {
            let stride = if s > 0 && b == 0 { 2 } else { 1 };
            let hidden = cin * cfg.expansion_rate;
            let name = format!("stage{}.block{}", s + 1, b + 1);
            let block_in = x;
            let mut y = g.conv_bn(&format!("{name}.expand"), x, cin, hidden, 1, 1, 1, true);
            y = g.conv_bn(&format!("{name}.depthwise"), y, hidden, hidden, 3, stride, hidden, true);
            y = g.conv_bn(&format!("{name}.project"), y, hidden, w, 1, 1, 1, false);
            if stride == 1 && cin == w {
                y = g.add(&format!("{name}.residual"), y, block_in);
            }
            x = y;
            cin = w;
        }
    }

    let head_start = g.last();
    x = g.conv_bn("head", x, cin, cfg.n_classes, 1, 1, 1, false);
    g.gap("head.pool", x);
    Ok(g.finish(ModelSpec::Cpm(cfg.clone()), head_start))
}

pub fn build_cpr(cfg: &CprConfig, seed: u64) -> Result<ModelGraph> {
    cfg.validate()?;
    let bc = cfg.base_channels;
    let mut g = GraphBuilder::new(seed);
    let mut x = g.conv_bn("stem", 0, 1, bc, 5, 2, 1, true);

    let widths = [bc, 2 * bc, 4 * bc];
    let mut cin = bc;
    for (s, &w) in widths.iter().enumerate() {
        for (b, &(k1, k2)) in CPR_STAGE_KERNELS[s].iter().enumerate() {
            let stride = if s == 1 && b == 0 { 2 } else { 1 };
            let name = format!("stage{}.block{}", s + 1, b + 1);
            let block_in = x;
            let mut y = g.conv_bn(&format!("{name}.conv1"), x, cin, w, k1, stride, 1, true);
            y = g.conv_bn(&format!("{name}.conv2"), y, w, w, k2, 1, 1, false);
            let shortcut = if stride != 1 || cin != w {
                g.conv_bn(&format!("{name}.shortcut"), block_in, cin, w, 1, stride, 1, false)
            } else {
                block_in
            };
            y = g.add(&format!("{name}.residual"), y, shortcut);
            x = g.relu(&format!("{name}.relu"), y);
            cin = w;
        }
    }

    let head_start = g.last();
    x = g.conv("head.conv", x, cin, cfg.n_classes, 1, 1, 1, true);
    g.gap("head.pool", x);
    Ok(g.finish(ModelSpec::Cpr(cfg.clone()), head_start))
}

pub fn build_baseline(cfg: &BaselineConfig, seed: u64) -> Result<ModelGraph> {
    cfg.validate()?;
    let c = cfg.channels;
    let mut g = GraphBuilder::new(seed);
    let mut x = g.conv_bn("conv1", 0, 1, c, 3, 2, 1, true);
    x = g.conv_bn("conv2", x, c, 2 * c, 3, 2, 1, true);
    x = g.gap("pool", x);
    let head_start = g.last();
    g.linear("fc", x, 2 * c, cfg.n_classes);
    Ok(g.finish(ModelSpec::Baseline(cfg.clone()), head_start))
}
