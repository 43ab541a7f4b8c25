use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::manifest::{ClipRecord, Manifest, Split, SCENES};
use crate::audio::{write_wav_pcm16, Waveform};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub seed: u64,
    pub n_scenes: usize,
    pub n_devices: usize,
    /// The last `n_unseen` devices only record validation clips.
    pub n_unseen: usize,
    /// Training clips per (scene, seen device).
    pub clips_per_cell: usize,
    /// Validation clips per (scene, device).
    pub val_per_cell: usize,
    pub sample_rate: u32,
    pub seconds: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            seed: 0,
            n_scenes: 10,
            n_devices: 9,
            n_unseen: 3,
            clips_per_cell: 4,
            val_per_cell: 1,
            sample_rate: 32_000,
            seconds: 1.0,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_scenes < 2 || self.n_scenes > SCENES.len() {
            return Err(Error::Config(format!("n_scenes must be in 2..={}", SCENES.len())));
        }
        if self.n_devices == 0 || self.n_unseen >= self.n_devices {
            return Err(Error::Config(format!(
                "need n_unseen < n_devices, got {} and {}",
                self.n_unseen, self.n_devices
            )));
        }
        if self.clips_per_cell == 0 || self.val_per_cell == 0 {
            return Err(Error::Config("clip counts per cell must be positive".into()));
        }
        if self.sample_rate < 8000 || !(self.seconds > 0.0) {
            return Err(Error::Config("sample_rate must be >= 8000 and seconds positive".into()));
        }
        Ok(())
    }
}

/// `a`, `b`, `c`, then `s1`, `s2`, ...
pub fn device_names(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| match i {
            0..=2 => ((b'a' + i as u8) as char).to_string(),
            _ => format!("s{}", i - 2),
        })
        .collect()
}

/// A scene is a set of amplitude-gated components: a resonant noise band and
/// two tones, each with its own gating rate.
struct SceneParams {
    center: f64,
    resonance: f64,
    band_rate: f64,
    tones: [(f64, f64); 2],
}

impl SceneParams {
    fn draw(s: usize, n_scenes: usize, sr: f64, rng: &mut ChaCha8Rng) -> Self {
        let lo: f64 = 150.0;
        let hi = (0.3 * sr).min(6000.0);
        let pos = |i: f64| lo * (hi / lo).powf(i / n_scenes as f64);
        let center = pos(s as f64 + 0.5);
        let rate = |rng: &mut ChaCha8Rng| rng.random_range(1.5..7.0);
        SceneParams {
            center,
            resonance: rng.random_range(0.93..0.985),
            band_rate: rate(rng),
            tones: [
                (pos((s as f64 + 3.3) % n_scenes as f64), rate(rng)),
                (pos((s as f64 + 6.7) % n_scenes as f64), rate(rng)),
            ],
        }
    }

    fn render(&self, n: usize, sr: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let w = 2.0 * PI * self.center * rng.random_range(0.97..1.03) / sr;
        let r = self.resonance;
        let (a1, a2) = (2.0 * r * w.cos(), -r * r);
        let (mut y1, mut y2) = (0.0f64, 0.0f64);
        let mut white = Vec::with_capacity(n);
        let band: Vec<f64> = (0..n)
            .map(|_| {
                let x: f64 = StandardNormal.sample(rng);
                white.push(x);
                let y = x * (1.0 - r) + a1 * y1 + a2 * y2;
                y2 = y1;
                y1 = y;
                y
            })
            .collect();
        let rms = (band.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt().max(1e-12);
        let phases: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        let gate = |rate: f64, phase: f64, t: f64| (0.5 * (1.0 + (2.0 * PI * rate * t + phase).sin())).powi(2);
        (0..n)
            .map(|i| {
                let t = i as f64 / sr;
                let mut v = 0.3 * band[i] / rms * gate(self.band_rate, phases[0], t);
                for (k, &(f, rate)) in self.tones.iter().enumerate() {
                    v += 0.2 * (2.0 * PI * f * t + phases[1 + k]).sin() * gate(rate, phases[3 + k], t);
                }
                v + 0.02 * white[i]
            })
            .collect()
    }
}

struct DeviceParams {
    fir: Vec<f64>,
    gain: f64,
}

impl DeviceParams {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let mut fir: Vec<f64> = (0..8).map(|_| { let z: f64 = StandardNormal.sample(rng); 0.4 * z }).collect();
        fir[0] = 1.0;
        let norm: f64 = fir.iter().map(|v| v.abs()).sum();
        DeviceParams {
            fir: fir.into_iter().map(|v| v / norm).collect(),
            gain: rng.random_range(0.5..1.0),
        }
    }

    fn record(&self, x: &[f64]) -> Vec<f32> {
        let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        (0..x.len())
            .map(|i| {
                let y: f64 = self
                    .fir
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k <= i)
                    .map(|(k, h)| h * x[i - k])
                    .sum();
                (0.9 * self.gain * y / peak) as f32
            })
            .collect()
    }
}

/// Writes PCM16 clips under `out_dir/audio` and `out_dir/manifest.csv`.
pub fn generate_toy_dataset(cfg: &ToyConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let audio = out_dir.join("audio");
    std::fs::create_dir_all(&audio).map_err(|e| Error::io(&audio, e))?;
    let sr = cfg.sample_rate as f64;
    let n = (cfg.seconds * sr).round() as usize;
    let scenes: Vec<SceneParams> = (0..cfg.n_scenes)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, &[1, s as u64]));
            SceneParams::draw(s, cfg.n_scenes, sr, &mut rng)
        })
        .collect();
    let names = device_names(cfg.n_devices);
    let devices: Vec<DeviceParams> = (0..cfg.n_devices)
        .map(|d| DeviceParams::draw(&mut ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, &[2, d as u64]))))
        .collect();
    let n_seen = cfg.n_devices - cfg.n_unseen;

    let mut records = Vec::new();
    for (split, per_cell) in [(Split::Train, cfg.clips_per_cell), (Split::Val, cfg.val_per_cell)] {
        let dev_range = if split == Split::Train { 0..n_seen } else { 0..cfg.n_devices };
        for (s, scene) in scenes.iter().enumerate() {
            for d in dev_range.clone() {
                for i in 0..per_cell {
                    let path = [cfg.seed, 3, split as u64, s as u64, d as u64, i as u64];
                    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(path[0], &path[1..]));
                    let samples = devices[d].record(&scene.render(n, sr, &mut rng));
                    let rel = format!("audio/{split}-{}-{}-{i:03}.wav", SCENES[s], names[d]);
                    write_wav_pcm16(&out_dir.join(&rel), &Waveform::new(samples, cfg.sample_rate)?)?;
                    records.push(ClipRecord {
                        clip_path: rel,
                        scene: SCENES[s].to_string(),
                        device: names[d].clone(),
                        split,
                    });
                }
            }
        }
    }
    let manifest = Manifest::new(out_dir, records)?;
    manifest.save(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ToyConfig {
        ToyConfig {
            n_scenes: 3,
            n_devices: 4,
            n_unseen: 1,
            clips_per_cell: 1,
            val_per_cell: 1,
            sample_rate: 8000,
            seconds: 0.25,
            ..Default::default()
        }
    }

    #[test]
    fn device_naming() {
        assert_eq!(device_names(5), vec!["a", "b", "c", "s1", "s2"]);
    }

    #[test]
    fn byte_identical_regeneration() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = generate_toy_dataset(&small(), a.path()).unwrap();
        generate_toy_dataset(&small(), b.path()).unwrap();
        assert_eq!(ma.records().len(), 3 * 3 + 3 * 4);
        for r in ma.records() {
            let x = std::fs::read(a.path().join(&r.clip_path)).unwrap();
            let y = std::fs::read(b.path().join(&r.clip_path)).unwrap();
            assert_eq!(x, y);
        }
        assert_eq!(
            std::fs::read(a.path().join("manifest.csv")).unwrap(),
            std::fs::read(b.path().join("manifest.csv")).unwrap()
        );
        assert_eq!(ma.unseen_devices().into_iter().collect::<Vec<_>>(), vec!["s1"]);
    }

    #[test]
    fn no_unseen_devices() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_toy_dataset(&ToyConfig { n_unseen: 0, ..small() }, dir.path()).unwrap();
        assert!(m.unseen_devices().is_empty());
        let mut bad = small();
        bad.n_unseen = 4;
        assert!(generate_toy_dataset(&bad, dir.path()).is_err());
    }
}
