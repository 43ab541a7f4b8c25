//! Device-generalization augmentations: Freq-MixStyle on spectrogram batches,
//! device impulse response convolution on waveforms, and shifted crops.

mod crop;
mod dir;
mod fms;

pub use crop::{center_crop, crop_at, shifted_crop};
pub use dir::{
    dir_augment, dir_augment_batch, fft_convolve, load_ir_bank, synthetic_ir_bank, DirConfig,
};
pub use fms::{
    apply_fms, draw_fms, fms_coefficients, freq_mixstyle, freq_mixstyle_taped, FmsConfig, FmsDraw,
    FMS_EPS,
};
