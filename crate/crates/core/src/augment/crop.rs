use rand::Rng;

use crate::audio::Waveform;
use crate::error::{Error, Result};

pub fn crop_at(w: &Waveform, crop_len: usize, offset: usize) -> Result<Waveform> {
    if w.len() < crop_len || offset + crop_len > w.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot take {crop_len} samples at offset {offset} from a {}-sample clip",
            w.len()
        )));
    }
    Ok(Waveform {
        samples: w.samples[offset..offset + crop_len].to_vec(),
        sample_rate: w.sample_rate,
    })
}

/// Contiguous window at a uniformly random offset.
pub fn shifted_crop(w: &Waveform, crop_len: usize, rng: &mut impl Rng) -> Result<Waveform> {
    if w.len() < crop_len {
        return Err(Error::InvalidArgument(format!(
            "clip of {} samples is shorter than crop length {crop_len}",
            w.len()
        )));
    }
    let offset = rng.random_range(0..=w.len() - crop_len);
    crop_at(w, crop_len, offset)
}

/// Deterministic evaluation crop.
pub fn center_crop(w: &Waveform, crop_len: usize) -> Result<Waveform> {
    if w.len() < crop_len {
        return Err(Error::InvalidArgument(format!(
            "clip of {} samples is shorter than crop length {crop_len}",
            w.len()
        )));
    }
    crop_at(w, crop_len, (w.len() - crop_len) / 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(n: usize) -> Waveform {
        Waveform::new((0..n).map(|i| i as f32 / n as f32).collect(), 16_000).unwrap()
    }

    #[test]
    fn full_length_crop_is_identity() {
        let w = ramp(100);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(shifted_crop(&w, 100, &mut rng).unwrap(), w);
        assert_eq!(center_crop(&w, 100).unwrap(), w);
    }

    #[test]
    fn zero_offset_takes_prefix() {
        let w = ramp(100);
        assert_eq!(crop_at(&w, 30, 0).unwrap().samples, w.samples[..30].to_vec());
        assert_eq!(center_crop(&w, 30).unwrap().samples, w.samples[35..65].to_vec());
    }

    #[test]
    fn short_clip_rejected() {
        let w = ramp(10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(shifted_crop(&w, 11, &mut rng).is_err());
        assert!(center_crop(&w, 11).is_err());
    }

    #[test]
    fn offsets_cover_valid_range() {
        let crop = 200;
        let w = ramp(2 * crop);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut hit = vec![false; crop + 1];
        for _ in 0..1000 {
            let c = shifted_crop(&w, crop, &mut rng).unwrap();
            let off = (c.samples[0] * w.len() as f32).round() as usize;
            hit[off] = true;
        }
        let covered = hit.iter().filter(|&&h| h).count() as f64 / hit.len() as f64;
        assert!(covered >= 0.9, "coverage {covered}");
    }
}
