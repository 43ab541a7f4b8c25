use std::fmt;

use serde::Serialize;

use super::graph::{LayerOp, ModelGraph};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerComplexity {
    pub name: String,
    pub kind: &'static str,
    pub out_shape: Vec<usize>,
    pub params: u64,
    pub macs: u64,
}

/// Parameter and multiply-accumulate totals for a single clip.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelComplexity {
    pub params: u64,
    pub macs: u64,
    pub layers: Vec<LayerComplexity>,
}

/// Counts parameters and per-clip MACs. `input_shape` is `[C, F, T]` or
/// `[N, C, F, T]`; a batch dimension is replaced by 1.
pub fn count_complexity(graph: &ModelGraph, input_shape: &[usize]) -> Result<ModelComplexity> {
    let shape = match input_shape.len() {
        3 => vec![1, input_shape[0], input_shape[1], input_shape[2]],
        _ => {
            let mut s = input_shape.to_vec();
            if let Some(n) = s.first_mut() {
                *n = 1;
            }
            s
        }
    };
    let shapes = graph.infer_shapes(&shape)?;
    let mut layers = Vec::with_capacity(graph.layers.len());
    for (i, l) in graph.layers.iter().enumerate() {
        let out = &shapes[i + 1];
        let (params, macs) = match &l.op {
            LayerOp::Conv2d(c) => {
                let k = (c.kernel * c.kernel) as u64;
                let per_out = k * (c.in_ch / c.params.groups) as u64;
                let w = c.out_ch as u64 * per_out;
                let b = if c.bias.is_some() { c.out_ch as u64 } else { 0 };
                let spatial = (out[2] * out[3]) as u64;
                (w + b, spatial * c.out_ch as u64 * per_out)
            }
            LayerOp::BatchNorm(b) => (2 * b.gamma.numel() as u64, 0),
            LayerOp::Linear(lin) => {
                let (i, o) = (lin.weight.shape()[0] as u64, lin.weight.shape()[1] as u64);
                (i * o + o, i * o)
            }
            LayerOp::Relu | LayerOp::Add { .. } | LayerOp::GlobalAvgPool => (0, 0),
        };
        layers.push(LayerComplexity {
            name: l.name.clone(),
            kind: l.op.kind(),
            out_shape: out[1..].to_vec(),
            params,
            macs,
        });
    }
    Ok(ModelComplexity {
        params: layers.iter().map(|l| l.params).sum(),
        macs: layers.iter().map(|l| l.macs).sum(),
        layers,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    pub max_params: u64,
    pub max_macs: u64,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            max_params: 128_000,
            max_macs: 30_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Resource {
    Params,
    Macs,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub resource: Resource,
    pub total: u64,
    pub limit: u64,
    /// Layer at which the running total first exceeds the limit.
    pub first_layer: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetReport {
    pub params: u64,
    pub macs: u64,
    pub budget: Budget,
    pub violations: Vec<Violation>,
}

impl BudgetReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn fails_on(&self, r: Resource) -> bool {
        self.violations.iter().any(|v| v.resource == r)
    }
}

impl fmt::Display for BudgetReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            return write!(
                f,
                "PASS: {} params (limit {}), {} MACs (limit {})",
                self.params, self.budget.max_params, self.macs, self.budget.max_macs
            );
        }
        write!(f, "FAIL:")?;
        for (i, v) in self.violations.iter().enumerate() {
            let what = match v.resource {
                Resource::Params => "params",
                Resource::Macs => "MACs",
            };
            let sep = if i == 0 { " " } else { "; " };
            write!(
                f,
                "{sep}{what} {} > {} (limit crossed at layer {})",
                v.total, v.limit, v.first_layer
            )?;
        }
        Ok(())
    }
}

pub fn assert_budget(c: &ModelComplexity, budget: Budget) -> BudgetReport {
    let mut violations = Vec::new();
    for (resource, total, limit) in [
        (Resource::Params, c.params, budget.max_params),
        (Resource::Macs, c.macs, budget.max_macs),
    ] {
        if total <= limit {
            continue;
        }
        let mut running = 0u64;
        let mut first_layer = String::new();
        for l in &c.layers {
            running += match resource {
                Resource::Params => l.params,
                Resource::Macs => l.macs,
            };
            if running > limit {
                first_layer = l.name.clone();
                break;
            }
        }
        violations.push(Violation {
            resource,
            total,
            limit,
            first_layer,
        });
    }
    BudgetReport {
        params: c.params,
        macs: c.macs,
        budget,
        violations,
    }
}
