use super::{LogMelSpec, Spectrogram};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Added to mel power before the logarithm.
pub const LOG_OFFSET: f32 = 1e-5;

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters on the HTK mel scale, area-normalized so that a flat
/// power spectrum produces roughly equal energy in every band.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub mel_bins: usize,
    pub fft_bins: usize,
    /// Band centre frequencies in Hz.
    pub centers: Vec<f64>,
    /// Row-major `[mel_bins, fft_bins]`.
    pub weights: Vec<f32>,
}

impl MelFilterbank {
    pub fn new(sample_rate: u32, n_fft: usize, mel_bins: usize, f_min: f32, f_max: f32) -> Result<Self> {
        if mel_bins < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 mel bins, got {mel_bins}")));
        }
        let nyquist = sample_rate as f32 / 2.0;
        if !(f_min >= 0.0 && f_min < f_max && f_max <= nyquist) {
            return Err(Error::InvalidArgument(format!(
                "require 0 <= f_min < f_max <= {nyquist}, got {f_min}..{f_max}"
            )));
        }
        let fft_bins = n_fft / 2 + 1;
        let (mlo, mhi) = (hz_to_mel(f_min as f64), hz_to_mel(f_max as f64));
        let edges: Vec<f64> = (0..mel_bins + 2)
            .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (mel_bins + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let mut weights = vec![0.0f32; mel_bins * fft_bins];
        for m in 0..mel_bins {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = 2.0 / (hi - lo);
            for k in 0..fft_bins {
                let f = k as f64 * bin_hz;
                let w = if f > lo && f <= c {
                    (f - lo) / (c - lo)
                } else if f > c && f < hi {
                    (hi - f) / (hi - c)
                } else {
                    0.0
                };
                weights[m * fft_bins + k] = (w * norm) as f32;
            }
        }
        Ok(MelFilterbank {
            mel_bins,
            fft_bins,
            centers: edges[1..=mel_bins].to_vec(),
            weights,
        })
    }

    pub fn row(&self, m: usize) -> &[f32] {
        &self.weights[m * self.fft_bins..(m + 1) * self.fft_bins]
    }
}

/// Mel power `log(fb · |X|² + 1e-5)` as a `[1, mel_bins, frames]` tensor.
pub fn log_mel(spec: &Spectrogram, fb: &MelFilterbank) -> Result<LogMelSpec> {
    if spec.bins != fb.fft_bins {
        return Err(Error::shape(
            "log_mel",
            format!("spectrogram has {} bins, filterbank expects {}", spec.bins, fb.fft_bins),
        ));
    }
    let t = spec.frames;
    let power: Vec<f32> = spec.data.iter().map(|c| c.norm_sqr()).collect();
    let mut out = vec![0.0f32; fb.mel_bins * t];
    for m in 0..fb.mel_bins {
        let row = fb.row(m);
        let dst = &mut out[m * t..(m + 1) * t];
        for (k, &w) in row.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (d, &p) in dst.iter_mut().zip(&power[k * t..(k + 1) * t]) {
                *d += w * p;
            }
        }
        for d in dst.iter_mut() {
            *d = (*d + LOG_OFFSET).ln();
        }
    }
    let values = Tensor::new(vec![1, fb.mel_bins, t], out)?;
    values.ensure_finite("log_mel")?;
    Ok(LogMelSpec { values })
}
