use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Lower bound on the per-band standard deviation used for normalization.
pub const FMS_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FmsConfig {
    /// Shape of the symmetric Beta distribution the mixing weight is drawn from.
    pub alpha: f32,
    /// Probability that a batch is augmented at all.
    pub p: f32,
}

impl FmsConfig {
    pub fn new(alpha: f32, p: f32) -> Result<Self> {
        if !(alpha > 0.0) || !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "Freq-MixStyle needs alpha > 0 and 0 <= p <= 1, got alpha={alpha} p={p}"
            )));
        }
        Ok(FmsConfig { alpha, p })
    }
}

/// One batch-level random draw: mixing weight and partner permutation.
#[derive(Debug, Clone, PartialEq)]
pub struct FmsDraw {
    pub lambda: f64,
    pub perm: Vec<usize>,
}

/// Draws the apply decision, then (if applied) `λ ~ Beta(α, α)` and a permutation.
pub fn draw_fms(n: usize, cfg: &FmsConfig, rng: &mut impl Rng) -> Option<FmsDraw> {
    let u: f64 = rng.random();
    if u >= cfg.p as f64 {
        return None;
    }
    let beta = Beta::new(cfg.alpha as f64, cfg.alpha as f64).expect("alpha validated positive");
    let lambda = beta.sample(rng);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    Some(FmsDraw { lambda, perm })
}

fn check_batch(batch: &Tensor) -> Result<(usize, usize, usize)> {
    if batch.rank() != 4 {
        return Err(Error::shape("freq_mixstyle", format!("expected [N, C, F, T], got {:?}", batch.shape())));
    }
    let s = batch.shape();
    if s[0] == 0 || s[2] == 0 || s[3] == 0 {
        return Err(Error::shape("freq_mixstyle", format!("empty axis in {s:?}")));
    }
    Ok((s[0], s[1] * s[2], s[3]))
}

/// Per-row `(scale, shift)` so that `x * scale + shift` re-colours every
/// frequency band of sample `i` with statistics mixed from `perm[i]`.
pub fn fms_coefficients(batch: &Tensor, lambda: f64, perm: &[usize]) -> Result<(Vec<f32>, Vec<f32>)> {
    let (n, rows_per, t) = check_batch(batch)?;
    if perm.len() != n || {
        let mut seen = vec![false; n];
        perm.iter().any(|&j| j >= n || std::mem::replace(&mut seen[j], true))
    } {
        return Err(Error::InvalidArgument(format!("{perm:?} is not a permutation of 0..{n}")));
    }
    let stats: Vec<(f64, f64)> = batch
        .data()
        .chunks(t)
        .map(|row| {
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / t as f64;
            let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / t as f64;
            (mean, var.sqrt())
        })
        .collect();
    let mut scale = Vec::with_capacity(stats.len());
    let mut shift = Vec::with_capacity(stats.len());
    for i in 0..n {
        for r in 0..rows_per {
            let (mu, sig) = stats[i * rows_per + r];
            let (mu_o, sig_o) = stats[perm[i] * rows_per + r];
            let mu_mix = lambda * mu + (1.0 - lambda) * mu_o;
            let sig_mix = lambda * sig + (1.0 - lambda) * sig_o;
            let a = sig_mix / sig.max(FMS_EPS);
            scale.push(a as f32);
            shift.push((mu_mix - mu * a) as f32);
        }
    }
    Ok((scale, shift))
}

/// Applies a fixed draw outside any tape.
pub fn apply_fms(batch: &Tensor, lambda: f64, perm: &[usize]) -> Result<Tensor> {
    let (scale, shift) = fms_coefficients(batch, lambda, perm)?;
    let t = batch.shape()[3];
    let mut out = batch.data().to_vec();
    for (r, row) in out.chunks_mut(t).enumerate() {
        for v in row {
            *v = *v * scale[r] + shift[r];
        }
    }
    let out = Tensor::new(batch.shape().to_vec(), out)?;
    out.ensure_finite("freq_mixstyle")?;
    Ok(out)
}

/// Freq-MixStyle on a `[N, C, F, T]` batch; identity when the batch is not drawn.
pub fn freq_mixstyle(batch: &Tensor, cfg: &FmsConfig, rng: &mut impl Rng) -> Result<Tensor> {
    check_batch(batch)?;
    match draw_fms(batch.shape()[0], cfg, rng) {
        Some(d) => apply_fms(batch, d.lambda, &d.perm),
        None => Ok(batch.detach()),
    }
}

/// Taped variant: gradient flows to `x` only, statistics act as constants.
pub fn freq_mixstyle_taped(tape: &mut Tape, x: Var, cfg: &FmsConfig, rng: &mut impl Rng) -> Result<Var> {
    let batch = tape.value(x);
    check_batch(batch)?;
    match draw_fms(batch.shape()[0], cfg, rng) {
        Some(d) => {
            let (scale, shift) = fms_coefficients(batch, d.lambda, &d.perm)?;
            tape.row_affine(x, scale, shift)
        }
        None => Ok(x),
    }
}
