//! Small synthetic datasets and configs shared by the end-to-end tests.

use std::path::{Path, PathBuf};

use kdasc::data::{generate_toy_dataset, ToyConfig};

pub const SAMPLE_RATE: u32 = 16_000;

pub fn toy_config(seed: u64) -> ToyConfig {
    ToyConfig {
        seed,
        sample_rate: SAMPLE_RATE,
        ..ToyConfig::default()
    }
}

/// Writes the dataset under `dir/data` and returns the manifest path.
pub fn write_dataset(dir: &Path, cfg: &ToyConfig) -> PathBuf {
    let data = dir.join("data");
    generate_toy_dataset(cfg, &data).unwrap();
    data.join("manifest.csv")
}

pub const FRONTEND: &str = r#"
[data.frontend]
sample_rate = 16000
n_fft = 512
hop = 256
mel_bins = 32
"#;

pub fn train_section(epochs: usize, seed: u64) -> String {
    format!(
        "batch_size = 16\nepochs = {epochs}\nwarmup_epochs = 2\nlr = 0.003\ncrop_seconds = 0.8\nseed = {seed}\n"
    )
}

/// A single-model training config; `model` is the body of the `[model]` table.
pub fn train_toml(model: &str, preset: &str, epochs: usize, seed: u64, manifest: &Path) -> String {
    format!(
        "[model]\n{model}\n\n[augment]\npreset = \"{preset}\"\n\n[train]\n{}\n[data]\nmanifest = {:?}\n{FRONTEND}",
        train_section(epochs, seed),
        manifest.to_str().unwrap()
    )
}

/// One small CP-ResNet teacher under DIRFMS over three seeds, distilled into
/// one CP-Mobile student.
pub fn matrix_toml(manifest: &Path, teacher_epochs: usize, student_epochs: usize) -> String {
    format!(
        r#"seeds = [0, 1, 2]
presets = ["DIRFMS"]
student_preset = "DIRFMS"
student = {{ arch = "cpm", base_channels = 8 }}

[[teacher]]
name = "cpr-small"
arch = "cpr"
base_channels = 8

[train]
{}
[student_train]
{}
[data]
manifest = {:?}
{FRONTEND}"#,
        train_section(teacher_epochs, 0),
        train_section(student_epochs, 0),
        manifest.to_str().unwrap()
    )
}
