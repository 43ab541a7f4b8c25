use rustfft::num_complex::Complex;

use super::fft::fft_in_place;
use super::Waveform;
use crate::error::{Error, Result};

/// Complex STFT laid out bin-major: `data[bin * frames + frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub n_fft: usize,
    pub bins: usize,
    pub frames: usize,
    pub sample_rate: u32,
    pub data: Vec<Complex<f32>>,
}

impl Spectrogram {
    pub fn at(&self, bin: usize, frame: usize) -> Complex<f32> {
        self.data[bin * self.frames + frame]
    }
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

fn reflect_pad(x: &[f32], pad: usize) -> Vec<f32> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| x[i]));
    out.extend_from_slice(x);
    out.extend((0..pad).map(|i| x[n - 2 - i]));
    out
}

/// Centered, reflect-padded, Hann-windowed STFT with `n_fft / 2 + 1` bins.
pub fn stft(w: &Waveform, n_fft: usize, hop: usize) -> Result<Spectrogram> {
    if !n_fft.is_power_of_two() || n_fft < 2 {
        return Err(Error::InvalidArgument(format!(
            "n_fft must be a power of two >= 2, got {n_fft}"
        )));
    }
    if hop == 0 {
        return Err(Error::InvalidArgument("hop must be positive".into()));
    }
    if w.len() < n_fft {
        return Err(Error::InvalidArgument(format!(
            "clip of {} samples is shorter than one {n_fft}-sample frame",
            w.len()
        )));
    }
    let padded = reflect_pad(&w.samples, n_fft / 2);
    let frames = 1 + (padded.len() - n_fft) / hop;
    let bins = n_fft / 2 + 1;
    let window = hann_window(n_fft);
    let mut data = vec![Complex::new(0.0f32, 0.0); bins * frames];
    let mut buf = vec![Complex::new(0.0f64, 0.0); n_fft];
    for f in 0..frames {
        let seg = &padded[f * hop..f * hop + n_fft];
        for ((b, &s), &wv) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new(s as f64 * wv, 0.0);
        }
        fft_in_place(&mut buf);
        for (k, v) in buf.iter().take(bins).enumerate() {
            data[k * frames + f] = Complex::new(v.re as f32, v.im as f32);
        }
    }
    Ok(Spectrogram {
        n_fft,
        bins,
        frames,
        sample_rate: w.sample_rate,
        data,
    })
}
