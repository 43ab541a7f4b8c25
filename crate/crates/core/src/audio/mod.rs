//! Waveform ingestion and the log-mel frontend.

mod fft;
mod mel;
mod stft;
mod wav;

pub use fft::{fft_in_place, ifft_in_place};
pub use mel::{log_mel, MelFilterbank, LOG_OFFSET};
pub use stft::{hann_window, stft, Spectrogram};
pub use wav::{load_wav, write_wav_f32, write_wav_pcm16};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite { op: "waveform" });
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }
}

/// Log-mel spectrogram stored as a `[1, mel_bins, frames]` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpec {
    pub values: Tensor,
}

impl LogMelSpec {
    pub fn mel_bins(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[2]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub mel_bins: usize,
    pub f_min: f32,
    /// Defaults to the Nyquist frequency.
    pub f_max: Option<f32>,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            sample_rate: 32_000,
            n_fft: 1024,
            hop: 320,
            mel_bins: 128,
            f_min: 0.0,
            f_max: None,
        }
    }
}

impl FrontendConfig {
    pub fn f_max(&self) -> f32 {
        self.f_max.unwrap_or(self.sample_rate as f32 / 2.0)
    }

    /// Frame count of a centered STFT over `n_samples`.
    pub fn frames_for(&self, n_samples: usize) -> usize {
        1 + n_samples / self.hop
    }

    /// Model input shape `[1, 1, mel_bins, frames]` for a clip of `seconds`.
    pub fn input_shape(&self, seconds: f64) -> [usize; 4] {
        let n = (seconds * self.sample_rate as f64).round() as usize;
        [1, 1, self.mel_bins, self.frames_for(n)]
    }
}

/// Precomputed window and filterbank for one [`FrontendConfig`].
#[derive(Debug, Clone)]
pub struct Frontend {
    cfg: FrontendConfig,
    filterbank: MelFilterbank,
}

impl Frontend {
    pub fn new(cfg: FrontendConfig) -> Result<Self> {
        if cfg.hop == 0 {
            return Err(Error::InvalidArgument("hop must be positive".into()));
        }
        if !cfg.n_fft.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "n_fft must be a power of two, got {}",
                cfg.n_fft
            )));
        }
        let filterbank =
            MelFilterbank::new(cfg.sample_rate, cfg.n_fft, cfg.mel_bins, cfg.f_min, cfg.f_max())?;
        Ok(Frontend { cfg, filterbank })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn log_mel(&self, w: &Waveform) -> Result<LogMelSpec> {
        if w.sample_rate != self.cfg.sample_rate {
            return Err(Error::InvalidArgument(format!(
                "clip sampled at {} Hz but frontend expects {} Hz",
                w.sample_rate, self.cfg.sample_rate
            )));
        }
        let spec = stft(w, self.cfg.n_fft, self.cfg.hop)?;
        log_mel(&spec, &self.filterbank)
    }
}
