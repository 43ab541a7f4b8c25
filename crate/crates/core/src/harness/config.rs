use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::FrontendConfig;
use crate::distill::DistillConfig;
use crate::error::{Error, Result};
use crate::models::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Student,
    Teacher,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    #[serde(default = "ModelSection::default_role")]
    pub role: Role,
    #[serde(flatten)]
    pub spec: ModelSpec,
}

impl ModelSection {
    fn default_role() -> Role {
        Role::Teacher
    }
}

/// Device-generalization method set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DgPreset {
    #[serde(rename = "NONE")]
    None,
    #[serde(rename = "FMS")]
    Fms,
    #[serde(rename = "DIR")]
    Dir,
    #[serde(rename = "DIRFMS")]
    Dirfms,
}

impl fmt::Display for DgPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DgPreset::None => "NONE",
            DgPreset::Fms => "FMS",
            DgPreset::Dir => "DIR",
            DgPreset::Dirfms => "DIRFMS",
        })
    }
}

impl FromStr for DgPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "NONE" => Ok(DgPreset::None),
            "FMS" => Ok(DgPreset::Fms),
            "DIR" => Ok(DgPreset::Dir),
            "DIRFMS" => Ok(DgPreset::Dirfms),
            _ => Err(Error::Config(format!("undefined DG preset {s:?}"))),
        }
    }
}

/// Which hyperparameter row of the DG table applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Student,
    CpTeacher,
    Passt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DgParams {
    pub fms_alpha: f32,
    pub fms_p: f32,
    pub dir_p: f32,
}

pub fn preset_params(preset: DgPreset, family: Family) -> DgParams {
    let (fms_alpha, fms_p, dir_p) = match family {
        Family::Student => (0.3, 0.4, 0.6),
        Family::CpTeacher => (0.3, 0.8, 0.4),
        Family::Passt => (0.4, 0.4, 0.6),
    };
    let (use_fms, use_dir) = match preset {
        DgPreset::None => (false, false),
        DgPreset::Fms => (true, false),
        DgPreset::Dir => (false, true),
        DgPreset::Dirfms => (true, true),
    };
    DgParams {
        fms_alpha,
        fms_p: if use_fms { fms_p } else { 0.0 },
        dir_p: if use_dir { dir_p } else { 0.0 },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillSection {
    /// Teacher logit store; label-only training when absent.
    pub teacher_logits: Option<PathBuf>,
    pub lambda: f64,
    pub tau: f64,
}

impl Default for DistillSection {
    fn default() -> Self {
        let d = DistillConfig::default();
        DistillSection {
            teacher_logits: None,
            lambda: d.lambda,
            tau: d.tau,
        }
    }
}

impl DistillSection {
    pub fn config(&self) -> Result<DistillConfig> {
        DistillConfig::new(self.lambda, self.tau)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub preset: DgPreset,
    pub fms_alpha: Option<f32>,
    pub fms_p: Option<f32>,
    pub dir_p: Option<f32>,
    /// Directory of impulse-response WAVs; the synthetic bank otherwise.
    pub ir_dir: Option<PathBuf>,
    pub ir_seed: u64,
}

impl Default for AugmentSection {
    fn default() -> Self {
        AugmentSection {
            preset: DgPreset::None,
            fms_alpha: None,
            fms_p: None,
            dir_p: None,
            ir_dir: None,
            ir_seed: 0,
        }
    }
}

impl AugmentSection {
    /// Preset values for the model's family with explicit keys taking precedence.
    pub fn resolve(&self, role: Role) -> DgParams {
        let family = match role {
            Role::Student => Family::Student,
            Role::Teacher => Family::CpTeacher,
        };
        let base = preset_params(self.preset, family);
        DgParams {
            fms_alpha: self.fms_alpha.unwrap_or(base.fms_alpha),
            fms_p: self.fms_p.unwrap_or(base.fms_p),
            dir_p: self.dir_p.unwrap_or(base.dir_p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f32,
    pub warmup_epochs: usize,
    pub seed: u64,
    /// Independent runs with seeds `seed`, `seed + 1`, ...
    pub runs: usize,
    /// Epochs at the end of training that are checkpointed and averaged.
    pub last_k: usize,
    /// Training crop length; the whole clip when absent.
    pub crop_seconds: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            batch_size: 32,
            epochs: 30,
            lr: 1e-3,
            warmup_epochs: 4,
            seed: 0,
            runs: 1,
            last_k: 4,
            crop_seconds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub manifest: PathBuf,
    #[serde(default)]
    pub frontend: FrontendConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub distill: DistillSection,
    #[serde(default)]
    pub augment: AugmentSection,
    #[serde(default)]
    pub train: TrainSection,
    pub data: DataSection,
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase_paths(base);
        Ok(cfg)
    }

    pub fn rebase_paths(&mut self, base: &Path) {
        rebase(base, &mut self.data.manifest);
        if let Some(p) = self.distill.teacher_logits.as_mut() {
            rebase(base, p);
        }
        if let Some(p) = self.augment.ir_dir.as_mut() {
            rebase(base, p);
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        if t.batch_size == 0 || t.epochs == 0 || t.runs == 0 {
            return Err(Error::Config("batch_size, epochs and runs must be positive".into()));
        }
        if t.last_k == 0 || t.last_k > t.epochs {
            return Err(Error::Config(format!("last_k {} must be in 1..={}", t.last_k, t.epochs)));
        }
        if !(t.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if t.warmup_epochs > t.epochs {
            return Err(Error::Config("warmup longer than training".into()));
        }
        if let Some(c) = t.crop_seconds {
            if !(c > 0.0) {
                return Err(Error::Config("crop_seconds must be positive".into()));
            }
        }
        self.distill.config()?;
        let dg = self.augment.resolve(self.model.role);
        if !(dg.fms_alpha > 0.0) || !(0.0..=1.0).contains(&dg.fms_p) || !(0.0..=1.0).contains(&dg.dir_p) {
            return Err(Error::Config(format!("invalid augmentation settings {dg:?}")));
        }
        Ok(())
    }
}
