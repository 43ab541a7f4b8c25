//! CP-Mobile / CP-ResNet classifiers as small layer graphs, plus analytic
//! parameter and MAC accounting against the low-complexity budget.

mod builders;
mod complexity;
mod graph;

pub use builders::{build_baseline, build_cpm, build_cpr, BaselineConfig, CpmConfig, CprConfig, CPM_BLOCKS, CPR_STAGE_KERNELS};
pub use complexity::{
    assert_budget, count_complexity, Budget, BudgetReport, LayerComplexity, ModelComplexity, Resource,
    Violation,
};
pub use graph::{load_model, save_model, BatchNorm, Conv2d, ForwardPass, Layer, LayerOp, Linear, ModelGraph};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Architecture description sufficient to rebuild a graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase")]
pub enum ModelSpec {
    Cpm(CpmConfig),
    Cpr(CprConfig),
    Baseline(BaselineConfig),
}

impl ModelSpec {
    pub fn build(&self, seed: u64) -> Result<ModelGraph> {
        match self {
            ModelSpec::Cpm(c) => build_cpm(c, seed),
            ModelSpec::Cpr(c) => build_cpr(c, seed),
            ModelSpec::Baseline(c) => build_baseline(c, seed),
        }
    }

    pub fn arch_name(&self) -> &'static str {
        match self {
            ModelSpec::Cpm(_) => "cpm",
            ModelSpec::Cpr(_) => "cpr",
            ModelSpec::Baseline(_) => "baseline",
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            ModelSpec::Cpm(c) => c.n_classes,
            ModelSpec::Cpr(c) => c.n_classes,
            ModelSpec::Baseline(c) => c.n_classes,
        }
    }

    pub fn base_channels(&self) -> usize {
        match self {
            ModelSpec::Cpm(c) => c.base_channels,
            ModelSpec::Cpr(c) => c.base_channels,
            ModelSpec::Baseline(c) => c.channels,
        }
    }
}
