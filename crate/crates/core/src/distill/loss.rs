use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    #[serde(default = "DistillConfig::default_lambda")]
    pub lambda: f64,
    #[serde(default = "DistillConfig::default_tau")]
    pub tau: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            lambda: Self::default_lambda(),
            tau: Self::default_tau(),
        }
    }
}

impl DistillConfig {
    fn default_lambda() -> f64 {
        0.02
    }

    fn default_tau() -> f64 {
        2.0
    }

    pub fn new(lambda: f64, tau: f64) -> Result<Self> {
        let c = DistillConfig { lambda, tau };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::InvalidArgument(format!("tau {} must be positive", self.tau)));
        }
        Ok(())
    }
}

fn log_softmax(z: &[f64], tau: f64) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = z.iter().map(|v| ((v - max) / tau).exp()).sum();
    let lse = s.ln();
    z.iter().map(|v| (v - max) / tau - lse).collect()
}

fn check_inputs(student: &[f64], k: usize, labels: &[usize]) -> Result<usize> {
    if k == 0 || !student.len().is_multiple_of(k) {
        return Err(Error::shape("kd_loss", format!("{} logits do not split into rows of {k}", student.len())));
    }
    let n = student.len() / k;
    if n == 0 || labels.len() != n {
        return Err(Error::shape("kd_loss", format!("{n} rows but {} labels", labels.len())));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::InvalidArgument(format!("label {y} out of range for {k} classes")));
    }
    Ok(n)
}

/// Batch-mean cross-entropy of `softmax(z)` against integer labels, with its
/// gradient. `z` is row-major `[N, K]`.
pub fn cross_entropy_value(z: &[f64], k: usize, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    kd_loss_value(z, None, k, labels, &DistillConfig { lambda: 1.0, tau: 1.0 })
}

/// Loss value and gradient w.r.t. the student logits in double precision.
/// Teacher logits may be omitted only when `lambda == 1`.
pub fn kd_loss_value(
    student: &[f64],
    teacher: Option<&[f64]>,
    k: usize,
    labels: &[usize],
    cfg: &DistillConfig,
) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    let n = check_inputs(student, k, labels)?;
    match teacher {
        Some(t) if t.len() != student.len() => {
            return Err(Error::shape("kd_loss", format!("teacher {} vs student {}", t.len(), student.len())));
        }
        None if cfg.lambda < 1.0 => {
            return Err(Error::InvalidArgument("teacher logits required when lambda < 1".into()));
        }
        _ => {}
    }
    let (lambda, tau) = (cfg.lambda, cfg.tau);
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; student.len()];
    for r in 0..n {
        let zs = &student[r * k..(r + 1) * k];
        let g = &mut grad[r * k..(r + 1) * k];
        if lambda > 0.0 {
            let ls = log_softmax(zs, 1.0);
            loss += lambda * -ls[labels[r]] * inv_n;
            for (j, gj) in g.iter_mut().enumerate() {
                let onehot = if j == labels[r] { 1.0 } else { 0.0 };
                *gj += lambda * (ls[j].exp() - onehot) * inv_n;
            }
        }
        if let (Some(t), true) = (teacher, lambda < 1.0) {
            let zt = &t[r * k..(r + 1) * k];
            let ls = log_softmax(zs, tau);
            let lt = log_softmax(zt, tau);
            let kl: f64 = lt.iter().zip(&ls).map(|(a, b)| a.exp() * (a - b)).sum();
            loss += (1.0 - lambda) * tau * tau * kl * inv_n;
            for j in 0..k {
                g[j] += (1.0 - lambda) * tau * (ls[j].exp() - lt[j].exp()) * inv_n;
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite { op: "kd_loss" });
    }
    Ok((loss, grad))
}

fn as_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

fn logits_shape(t: &Tensor) -> Result<usize> {
    if t.rank() != 2 {
        return Err(Error::shape("kd_loss", format!("expected [N, K] logits, got {:?}", t.shape())));
    }
    Ok(t.shape()[1])
}

/// `λ·CE(softmax(z_S), y) + (1−λ)·τ²·KL(softmax(z_T/τ) ‖ softmax(z_S/τ))`,
/// averaged over the batch. Gradient flows only to `student`.
pub fn kd_loss(
    tape: &mut Tape,
    student: Var,
    teacher: Option<&Tensor>,
    labels: &[usize],
    cfg: &DistillConfig,
) -> Result<Var> {
    let zs = tape.value(student);
    let k = logits_shape(zs)?;
    if let Some(t) = teacher {
        if t.shape() != zs.shape() {
            return Err(Error::shape("kd_loss", format!("teacher {:?} vs student {:?}", t.shape(), zs.shape())));
        }
    }
    let zt = teacher.map(as_f64);
    let (loss, grad) = kd_loss_value(&as_f64(zs), zt.as_deref(), k, labels, cfg)?;
    tape.fused_scalar(student, loss as f32, grad.into_iter().map(|g| g as f32).collect())
}

pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    kd_loss(tape, logits, None, labels, &DistillConfig { lambda: 1.0, tau: 1.0 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TauPoint {
    pub tau: f64,
    pub g: Vec<f64>,
    pub rel_err: f64,
}

/// Scaled soft-target gradients `τ²·∂KL/∂z_S` against their high-temperature limit.
#[derive(Debug, Clone, PartialEq)]
pub struct TauCheck {
    pub limit: Vec<f64>,
    pub points: Vec<TauPoint>,
    /// Relative error at τ = 100.
    pub high_tau_rel_err: f64,
    pub converged: bool,
}

pub const TAU_CHECK_HIGH: f64 = 100.0;
const TAU_CHECK_TOL: f64 = 0.05;

/// Evaluates the distillation gradient through the tape for one row of logits
/// at each temperature. When the limit is zero the error is absolute.
pub fn tau_gradient_scale_check(z_s: &[f32], z_t: &[f32], taus: &[f64]) -> Result<TauCheck> {
    if z_s.len() != z_t.len() || z_s.is_empty() {
        return Err(Error::shape("tau_gradient_scale_check", "logit rows differ in length".to_string()));
    }
    let k = z_s.len();
    let mean = |z: &[f32]| z.iter().map(|&v| v as f64).sum::<f64>() / k as f64;
    let (ms, mt) = (mean(z_s), mean(z_t));
    let limit: Vec<f64> = (0..k)
        .map(|j| ((z_s[j] as f64 - ms) - (z_t[j] as f64 - mt)) / k as f64)
        .collect();
    let limit_norm = limit.iter().map(|v| v * v).sum::<f64>().sqrt();

    let grad_at = |tau: f64| -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let s = tape.leaf(&Tensor::param(vec![1, k], z_s.to_vec())?);
        let t = Tensor::new(vec![1, k], z_t.to_vec())?;
        let loss = kd_loss(&mut tape, s, Some(&t), &[0], &DistillConfig::new(0.0, tau)?)?;
        tape.backward(loss)?;
        let g = tape.grad(s).ok_or_else(|| Error::Autodiff("student logits have no gradient".into()))?;
        Ok(g.iter().map(|&v| v as f64).collect())
    };
    let rel = |g: &[f64]| {
        let d = g.iter().zip(&limit).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if limit_norm > 0.0 {
            d / limit_norm
        } else {
            d
        }
    };

    let mut points = Vec::with_capacity(taus.len());
    for &tau in taus {
        if !(tau >= 1.0) {
            return Err(Error::InvalidArgument(format!("tau {tau} < 1")));
        }
        let g = grad_at(tau)?;
        points.push(TauPoint {
            tau,
            rel_err: rel(&g),
            g,
        });
    }
    let high_tau_rel_err = rel(&grad_at(TAU_CHECK_HIGH)?);
    Ok(TauCheck {
        limit,
        points,
        high_tau_rel_err,
        converged: high_tau_rel_err < TAU_CHECK_TOL,
    })
}
