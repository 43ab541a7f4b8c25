use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelSpec;
use crate::audio::FrontendConfig;
use crate::error::{Error, Result};
use crate::tensor::{
    load_checkpoint, save_checkpoint, BatchNormStats, Conv2dParams, NamedTensor, Tape, Tensor, Var,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub params: Conv2dParams,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub stats: BatchNormStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerOp {
    Conv2d(Conv2d),
    BatchNorm(BatchNorm),
    Relu,
    /// Adds the value produced at index `other` (0 is the graph input).
    Add { other: usize },
    GlobalAvgPool,
    Linear(Linear),
}

impl LayerOp {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerOp::Conv2d(c) if c.params.groups > 1 => "dwconv",
            LayerOp::Conv2d(_) => "conv",
            LayerOp::BatchNorm(_) => "bn",
            LayerOp::Relu => "relu",
            LayerOp::Add { .. } => "add",
            LayerOp::GlobalAvgPool => "gap",
            LayerOp::Linear(_) => "linear",
        }
    }
}

/// One node of the graph. Layer `i` writes value `i + 1`; value 0 is the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub input: usize,
    pub op: LayerOp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub spec: ModelSpec,
    pub layers: Vec<Layer>,
    /// Index of the first layer of the classifier head.
    pub head_start: usize,
}

pub struct ForwardPass {
    pub logits: Var,
    /// One leaf per trainable tensor, in [`ModelGraph::parameters`] order.
    pub params: Vec<Var>,
}

impl ModelGraph {
    pub fn output_index(&self) -> usize {
        self.layers.len()
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.layers {
            match &l.op {
                LayerOp::Conv2d(c) => {
                    out.push(&c.weight);
                    out.extend(c.bias.as_ref());
                }
                LayerOp::BatchNorm(b) => {
                    out.push(&b.gamma);
                    out.push(&b.beta);
                }
                LayerOp::Linear(lin) => {
                    out.push(&lin.weight);
                    out.push(&lin.bias);
                }
                _ => {}
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match &mut l.op {
                LayerOp::Conv2d(c) => {
                    out.push(&mut c.weight);
                    out.extend(c.bias.as_mut());
                }
                LayerOp::BatchNorm(b) => {
                    out.push(&mut b.gamma);
                    out.push(&mut b.beta);
                }
                LayerOp::Linear(lin) => {
                    out.push(&mut lin.weight);
                    out.push(&mut lin.bias);
                }
                _ => {}
            }
        }
        out
    }

    /// `(name, parameter)` pairs matching [`Self::parameters`] order.
    pub fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for l in &self.layers {
            match &l.op {
                LayerOp::Conv2d(c) => {
                    out.push((format!("{}.weight", l.name), &c.weight));
                    if let Some(b) = &c.bias {
                        out.push((format!("{}.bias", l.name), b));
                    }
                }
                LayerOp::BatchNorm(b) => {
                    out.push((format!("{}.gamma", l.name), &b.gamma));
                    out.push((format!("{}.beta", l.name), &b.beta));
                }
                LayerOp::Linear(lin) => {
                    out.push((format!("{}.weight", l.name), &lin.weight));
                    out.push((format!("{}.bias", l.name), &lin.bias));
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|t| t.numel()).sum()
    }

    /// Output shape of every value for a given input shape.
    pub fn infer_shapes(&self, input: &[usize]) -> Result<Vec<Vec<usize>>> {
        if input.len() != 4 {
            return Err(Error::shape("infer_shapes", format!("expected [N, C, F, T], got {input:?}")));
        }
        let mut shapes = vec![input.to_vec()];
        for l in &self.layers {
            let s = shapes
                .get(l.input)
                .ok_or_else(|| Error::shape("infer_shapes", format!("{} reads unknown value {}", l.name, l.input)))?
                .clone();
            let out = match &l.op {
                LayerOp::Conv2d(c) => {
                    if s.len() != 4 || s[1] != c.in_ch {
                        return Err(Error::shape(
                            "infer_shapes",
                            format!("{} expects {} channels, got {s:?}", l.name, c.in_ch),
                        ));
                    }
                    let (k, p, st) = (c.kernel, c.params.padding, c.params.stride);
                    if s[2] + 2 * p < k || s[3] + 2 * p < k {
                        return Err(Error::shape(
                            "infer_shapes",
                            format!("{}: feature map {}x{} vanished before a {k}x{k} kernel", l.name, s[2], s[3]),
                        ));
                    }
                    vec![s[0], c.out_ch, (s[2] + 2 * p - k) / st + 1, (s[3] + 2 * p - k) / st + 1]
                }
                LayerOp::BatchNorm(b) => {
                    if s.len() < 2 || s[1] != b.gamma.numel() {
                        return Err(Error::shape("infer_shapes", format!("{}: channel mismatch {s:?}", l.name)));
                    }
                    s
                }
                LayerOp::Relu => s,
                LayerOp::Add { other } => {
                    let o = shapes.get(*other).ok_or_else(|| {
                        Error::shape("infer_shapes", format!("{} adds unknown value {other}", l.name))
                    })?;
                    if *o != s {
                        return Err(Error::shape("infer_shapes", format!("{}: {s:?} + {o:?}", l.name)));
                    }
                    s
                }
                LayerOp::GlobalAvgPool => {
                    if s.len() < 3 {
                        return Err(Error::shape("infer_shapes", format!("{}: cannot pool {s:?}", l.name)));
                    }
                    vec![s[0], s[1]]
                }
                LayerOp::Linear(lin) => {
                    if s.len() != 2 || s[1] != lin.weight.shape()[0] {
                        return Err(Error::shape("infer_shapes", format!("{}: cannot project {s:?}", l.name)));
                    }
                    vec![s[0], lin.weight.shape()[1]]
                }
            };
            if out.contains(&0) {
                return Err(Error::shape("infer_shapes", format!("{} produces an empty map {out:?}", l.name)));
            }
            shapes.push(out);
        }
        Ok(shapes)
    }

    /// Runs the graph on the tape. In training mode batch-norm layers use
    /// batch statistics and update their running estimates.
    pub fn forward(&mut self, tape: &mut Tape, input: Var, training: bool) -> Result<ForwardPass> {
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input);
        let mut params = Vec::new();
        for l in &mut self.layers {
            let x = values[l.input];
            let y = match &mut l.op {
                LayerOp::Conv2d(c) => {
                    let w = tape.leaf(&c.weight);
                    params.push(w);
                    let b = c.bias.as_ref().map(|b| tape.leaf(b));
                    params.extend(b);
                    tape.conv2d(x, w, b, c.params)?
                }
                LayerOp::BatchNorm(bn) => {
                    let g = tape.leaf(&bn.gamma);
                    let b = tape.leaf(&bn.beta);
                    params.push(g);
                    params.push(b);
                    tape.batch_norm(x, g, b, &mut bn.stats, training)?
                }
                LayerOp::Relu => tape.relu(x)?,
                LayerOp::Add { other } => tape.add(x, values[*other])?,
                LayerOp::GlobalAvgPool => tape.global_avg_pool(x)?,
                LayerOp::Linear(lin) => {
                    let w = tape.leaf(&lin.weight);
                    let b = tape.leaf(&lin.bias);
                    params.push(w);
                    params.push(b);
                    tape.linear(x, w, Some(b))?
                }
            };
            values.push(y);
        }
        Ok(ForwardPass {
            logits: *values.last().expect("graph has an input value"),
            params,
        })
    }

    /// Copies gradients from the tape into the parameter tensors.
    pub fn collect_grads(&mut self, tape: &Tape, params: &[Var]) -> Result<()> {
        let mut targets = self.parameters_mut();
        if targets.len() != params.len() {
            return Err(Error::Autodiff(format!(
                "{} parameter vars for {} parameters",
                params.len(),
                targets.len()
            )));
        }
        for (t, v) in targets.iter_mut().zip(params) {
            let g = tape
                .grad(*v)
                .ok_or_else(|| Error::Autodiff("no gradient recorded for parameter".into()))?;
            t.set_grad(g)?;
        }
        Ok(())
    }

    /// Logits for a `[N, 1, F, T]` batch in evaluation mode.
    pub fn predict(&mut self, batch: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.detach());
        let out = self.forward(&mut tape, x, false)?;
        Ok(tape.value(out.logits).detach())
    }

    /// Zeroes every parameter of the classifier head.
    pub fn zero_head(&mut self) {
        for l in &mut self.layers[self.head_start..] {
            match &mut l.op {
                LayerOp::Conv2d(c) => {
                    c.weight.data_mut().fill(0.0);
                    if let Some(b) = c.bias.as_mut() {
                        b.data_mut().fill(0.0);
                    }
                }
                LayerOp::Linear(lin) => {
                    lin.weight.data_mut().fill(0.0);
                    lin.bias.data_mut().fill(0.0);
                }
                _ => {}
            }
        }
    }

    /// Parameters and batch-norm running statistics, ready for a checkpoint.
    pub fn state_tensors(&self) -> Vec<NamedTensor> {
        let mut out: Vec<NamedTensor> = self
            .named_parameters()
            .into_iter()
            .map(|(name, t)| NamedTensor {
                name,
                tensor: t.detach(),
            })
            .collect();
        for l in &self.layers {
            if let LayerOp::BatchNorm(b) = &l.op {
                let c = b.stats.mean.len();
                out.push(NamedTensor {
                    name: format!("{}.running_mean", l.name),
                    tensor: Tensor::new(vec![c], b.stats.mean.clone()).expect("length matches"),
                });
                out.push(NamedTensor {
                    name: format!("{}.running_var", l.name),
                    tensor: Tensor::new(vec![c], b.stats.var.clone()).expect("length matches"),
                });
            }
        }
        out
    }

    /// Overwrites parameters and running statistics from named tensors.
    pub fn load_state(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        let find = |name: &str| -> Result<&Tensor> {
            tensors
                .iter()
                .find(|t| t.name == name)
                .map(|t| &t.tensor)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks tensor {name}")))
        };
        let copy = |dst: &mut [f32], src: &Tensor, name: &str| -> Result<()> {
            if src.numel() != dst.len() {
                return Err(Error::shape(
                    "load_state",
                    format!("{name}: checkpoint has {} values, model {}", src.numel(), dst.len()),
                ));
            }
            dst.copy_from_slice(src.data());
            Ok(())
        };
        for l in &mut self.layers {
            let n = l.name.clone();
            match &mut l.op {
                LayerOp::Conv2d(c) => {
                    let name = format!("{n}.weight");
                    copy(c.weight.data_mut(), find(&name)?, &name)?;
                    if let Some(b) = c.bias.as_mut() {
                        let name = format!("{n}.bias");
                        copy(b.data_mut(), find(&name)?, &name)?;
                    }
                }
                LayerOp::BatchNorm(b) => {
                    for (suffix, dst) in [
                        ("gamma", b.gamma.data_mut()),
                        ("beta", b.beta.data_mut()),
                        ("running_mean", &mut b.stats.mean[..]),
                        ("running_var", &mut b.stats.var[..]),
                    ] {
                        let name = format!("{n}.{suffix}");
                        copy(dst, find(&name)?, &name)?;
                    }
                }
                LayerOp::Linear(lin) => {
                    for (suffix, dst) in [("weight", lin.weight.data_mut()), ("bias", lin.bias.data_mut())] {
                        let name = format!("{n}.{suffix}");
                        copy(dst, find(&name)?, &name)?;
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

const META_MODEL: &str = "meta.model";
const META_FRONTEND: &str = "meta.frontend";

fn spec_to_meta(spec: &ModelSpec) -> Vec<f32> {
    match spec {
        ModelSpec::Cpm(c) => vec![
            0.0,
            c.base_channels as f32,
            c.expansion_rate as f32,
            c.channels_multiplier,
            c.n_classes as f32,
        ],
        ModelSpec::Cpr(c) => vec![1.0, c.base_channels as f32, 0.0, 0.0, c.n_classes as f32],
        ModelSpec::Baseline(c) => vec![2.0, c.channels as f32, 0.0, 0.0, c.n_classes as f32],
    }
}

fn spec_from_meta(m: &[f32]) -> Option<ModelSpec> {
    use super::{BaselineConfig, CpmConfig, CprConfig};
    if m.len() != 5 {
        return None;
    }
    Some(match m[0] as u32 {
        0 => ModelSpec::Cpm(CpmConfig {
            base_channels: m[1] as usize,
            expansion_rate: m[2] as usize,
            channels_multiplier: m[3],
            n_classes: m[4] as usize,
        }),
        1 => ModelSpec::Cpr(CprConfig {
            base_channels: m[1] as usize,
            n_classes: m[4] as usize,
        }),
        2 => ModelSpec::Baseline(BaselineConfig {
            channels: m[1] as usize,
            n_classes: m[4] as usize,
        }),
        _ => return None,
    })
}

/// Writes a self-describing checkpoint: weights, running statistics and two
/// metadata tensors (architecture and frontend).
pub fn save_model(path: &Path, model: &ModelGraph, frontend: &FrontendConfig) -> Result<()> {
    let mut tensors = model.state_tensors();
    let meta = spec_to_meta(&model.spec);
    tensors.push(NamedTensor {
        name: META_MODEL.into(),
        tensor: Tensor::new(vec![meta.len()], meta)?,
    });
    let fe = vec![
        frontend.sample_rate as f32,
        frontend.n_fft as f32,
        frontend.hop as f32,
        frontend.mel_bins as f32,
        frontend.f_min,
        frontend.f_max(),
    ];
    tensors.push(NamedTensor {
        name: META_FRONTEND.into(),
        tensor: Tensor::new(vec![fe.len()], fe)?,
    });
    save_checkpoint(path, &tensors)
}

pub fn load_model(path: &Path) -> Result<(ModelGraph, FrontendConfig)> {
    let tensors = load_checkpoint(path)?;
    let meta = tensors
        .iter()
        .find(|t| t.name == META_MODEL)
        .and_then(|t| spec_from_meta(t.tensor.data()))
        .ok_or_else(|| Error::format(path, "missing or invalid meta.model tensor"))?;
    let fe = tensors
        .iter()
        .find(|t| t.name == META_FRONTEND)
        .map(|t| t.tensor.data().to_vec())
        .filter(|d| d.len() == 6)
        .ok_or_else(|| Error::format(path, "missing or invalid meta.frontend tensor"))?;
    let frontend = FrontendConfig {
        sample_rate: fe[0] as u32,
        n_fft: fe[1] as usize,
        hop: fe[2] as usize,
        mel_bins: fe[3] as usize,
        f_min: fe[4],
        f_max: Some(fe[5]),
    };
    let mut model = meta.build(0)?;
    model.load_state(&tensors)?;
    Ok((model, frontend))
}

/// Incremental construction helper shared by the architecture builders.
pub(crate) struct GraphBuilder {
    layers: Vec<Layer>,
    rng: ChaCha8Rng,
}

impl GraphBuilder {
    pub fn new(seed: u64) -> Self {
        GraphBuilder {
            layers: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Value index of the most recent layer output.
    pub fn last(&self) -> usize {
        self.layers.len()
    }

    fn push(&mut self, name: String, input: usize, op: LayerOp) -> usize {
        self.layers.push(Layer { name, input, op });
        self.layers.len()
    }

    /// Same-padded convolution with Kaiming fan-out normal initialization.
    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        name: &str,
        input: usize,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        bias: bool,
    ) -> usize {
        let fan_out = (out_ch * kernel * kernel) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_out).sqrt()).expect("positive std");
        let shape = vec![out_ch, in_ch / groups, kernel, kernel];
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| normal.sample(&mut self.rng) as f32).collect();
        let weight = Tensor::param(shape, data).expect("shape matches data");
        let bias = bias.then(|| Tensor::param(vec![out_ch], vec![0.0; out_ch]).expect("bias"));
        let op = LayerOp::Conv2d(Conv2d {
            in_ch,
            out_ch,
            kernel,
            params: Conv2dParams {
                stride,
                padding: kernel / 2,
                groups,
            },
            weight,
            bias,
        });
        self.push(name.to_string(), input, op)
    }

    pub fn bn(&mut self, name: &str, input: usize, ch: usize) -> usize {
        let op = LayerOp::BatchNorm(BatchNorm {
            gamma: Tensor::param(vec![ch], vec![1.0; ch]).expect("gamma"),
            beta: Tensor::param(vec![ch], vec![0.0; ch]).expect("beta"),
            stats: BatchNormStats::new(ch),
        });
        self.push(name.to_string(), input, op)
    }

    pub fn relu(&mut self, name: &str, input: usize) -> usize {
        self.push(name.to_string(), input, LayerOp::Relu)
    }

    pub fn add(&mut self, name: &str, a: usize, b: usize) -> usize {
        self.push(name.to_string(), a, LayerOp::Add { other: b })
    }

    pub fn gap(&mut self, name: &str, input: usize) -> usize {
        self.push(name.to_string(), input, LayerOp::GlobalAvgPool)
    }

    pub fn linear(&mut self, name: &str, input: usize, in_f: usize, out_f: usize) -> usize {
        let normal = Normal::new(0.0, 0.01).expect("positive std");
        let data: Vec<f32> = (0..in_f * out_f).map(|_| normal.sample(&mut self.rng) as f32).collect();
        let op = LayerOp::Linear(Linear {
            weight: Tensor::param(vec![in_f, out_f], data).expect("weight"),
            bias: Tensor::param(vec![out_f], vec![0.0; out_f]).expect("bias"),
        });
        self.push(name.to_string(), input, op)
    }

    /// conv → BN → optional ReLU; returns the last value index.
    #[allow(clippy::too_many_arguments)]
    pub fn conv_bn(
        &mut self,
        name: &str,
        input: usize,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        relu: bool,
    ) -> usize {
        let c = self.conv(&format!("{name}.conv"), input, in_ch, out_ch, kernel, stride, groups, false);
        let b = self.bn(&format!("{name}.bn"), c, out_ch);
        if relu {
            self.relu(&format!("{name}.relu"), b)
        } else {
            b
        }
    }

    pub fn finish(self, spec: ModelSpec, head_start: usize) -> ModelGraph {
        ModelGraph {
            spec,
            layers: self.layers,
            head_start,
        }
    }
}
