use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;

use crate::audio::{fft_in_place, ifft_in_place, load_wav, Waveform};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DirConfig {
    /// Probability that a given sample is convolved.
    pub p: f32,
    /// Peak-normalized impulse responses.
    pub ir_bank: Vec<Vec<f32>>,
}

impl DirConfig {
    /// Validates `p` and peak-normalizes every impulse response.
    pub fn new(p: f32, ir_bank: Vec<Vec<f32>>) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("DIR probability {p} outside [0, 1]")));
        }
        let mut bank = Vec::with_capacity(ir_bank.len());
        for (i, ir) in ir_bank.into_iter().enumerate() {
            let peak = ir.iter().fold(0.0f32, |m, v| m.max(v.abs()));
            if ir.is_empty() || !(peak > 0.0) || !peak.is_finite() {
                return Err(Error::InvalidArgument(format!("impulse response {i} is empty or silent")));
            }
            bank.push(ir.into_iter().map(|v| v / peak).collect());
        }
        Ok(DirConfig { p, ir_bank: bank })
    }
}

/// Eight decaying filtered-noise responses between 64 and 512 taps.
pub fn synthetic_ir_bank(seed: u64) -> Vec<Vec<f32>> {
    const LENGTHS: [usize; 8] = [64, 96, 128, 192, 256, 320, 384, 512];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LENGTHS
        .iter()
        .map(|&taps| {
            let decay = taps as f64 / rng.random_range(3.0..6.0);
            let smooth: f64 = rng.random_range(0.0..0.9);
            let mut state = 0.0f64;
            let mut ir: Vec<f32> = (0..taps)
                .map(|t| {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    state = smooth * state + (1.0 - smooth) * n;
                    (0.5 * state * (-(t as f64) / decay).exp()) as f32
                })
                .collect();
            ir[0] = 1.0;
            let peak = ir.iter().fold(0.0f32, |m, v| m.max(v.abs()));
            ir.iter_mut().for_each(|v| *v /= peak);
            ir
        })
        .collect()
}

/// Loads every `.wav` in `dir`, in sorted filename order.
pub fn load_ir_bank(dir: &Path) -> Result<Vec<Vec<f32>>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_wav(p).map(|w| w.samples)).collect()
}

/// Linear convolution via FFT, truncated to `signal.len()`.
pub fn fft_convolve(signal: &[f32], ir: &[f32]) -> Vec<f32> {
    if signal.is_empty() || ir.is_empty() {
        return vec![0.0; signal.len()];
    }
    let size = (signal.len() + ir.len() - 1).next_power_of_two();
    let mut a: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v as f64, 0.0)).collect();
    a.resize(size, Complex::new(0.0, 0.0));
    let mut b: Vec<Complex<f64>> = ir.iter().map(|&v| Complex::new(v as f64, 0.0)).collect();
    b.resize(size, Complex::new(0.0, 0.0));
    fft_in_place(&mut a);
    fft_in_place(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    ifft_in_place(&mut a);
    a[..signal.len()].iter().map(|c| c.re as f32).collect()
}

/// With probability `cfg.p`, convolves with a uniformly chosen IR and
/// rescales to the input's peak.
pub fn dir_augment(w: &Waveform, cfg: &DirConfig, rng: &mut impl Rng) -> Result<Waveform> {
    if cfg.p > 0.0 && cfg.ir_bank.is_empty() {
        return Err(Error::InvalidArgument("DIR enabled with an empty impulse response bank".into()));
    }
    let u: f64 = rng.random();
    if u >= cfg.p as f64 {
        return Ok(w.clone());
    }
    let ir = &cfg.ir_bank[rng.random_range(0..cfg.ir_bank.len())];
    let mut out = fft_convolve(&w.samples, ir);
    let (in_peak, out_peak) = (w.peak(), out.iter().fold(0.0f32, |m, v| m.max(v.abs())));
    if out_peak > 0.0 {
        let g = in_peak / out_peak;
        out.iter_mut().for_each(|v| *v *= g);
    }
    Waveform::new(out, w.sample_rate)
}

/// Batch form: sample `i` uses its own RNG seeded from `(batch_seed, i)`.
pub fn dir_augment_batch(ws: &[Waveform], cfg: &DirConfig, batch_seed: u64) -> Result<Vec<Waveform>> {
    ws.iter()
        .enumerate()
        .map(|(i, w)| {
            let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::derive(batch_seed, &[i as u64]));
            dir_augment(w, cfg, &mut rng)
        })
        .collect()
}
