use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::Waveform;
use crate::error::{Error, Result};

/// Reads PCM16 or IEEE float32 WAV, averaging channels to mono.
pub fn load_wav(path: &Path) -> Result<Waveform> {
    let mut reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    })?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::format(
                path,
                format!("unsupported codec: {bits}-bit {fmt:?}"),
            ))
        }
    };
    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks(channels)
            .map(|frame| frame.iter().sum::<f32>() / channels as f32)
            .collect()
    };
    Waveform::new(samples, spec.sample_rate).map_err(|_| Error::format(path, "non-finite samples"))
}

pub fn write_wav_pcm16(path: &Path, w: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &s in &w.samples {
        let q = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q)?;
    }
    writer.finalize()?;
    Ok(())
}

pub fn write_wav_f32(path: &Path, w: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &s in &w.samples {
        writer.write_sample(s)?;
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        write_wav_pcm16(&p, &Waveform::new(vec![0.0; 32_000], 32_000).unwrap()).unwrap();
        let w = load_wav(&p).unwrap();
        assert_eq!(w.sample_rate, 32_000);
        assert_eq!(w.samples.len(), 32_000);
        assert!(w.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn full_scale_square() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sq.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut wr = WavWriter::create(&p, spec).unwrap();
        for i in 0..100 {
            wr.write_sample(if (i / 10) % 2 == 0 { 32767i16 } else { -32767 }).unwrap();
        }
        wr.finalize().unwrap();
        let w = load_wav(&p).unwrap();
        for s in w.samples {
            assert!((s.abs() - 0.99997).abs() < 1e-5);
        }
    }

    #[test]
    fn stereo_is_downmixed_and_float_supported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("st.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut wr = WavWriter::create(&p, spec).unwrap();
        for _ in 0..4 {
            wr.write_sample(0.5f32).unwrap();
            wr.write_sample(-0.25f32).unwrap();
        }
        wr.finalize().unwrap();
        let w = load_wav(&p).unwrap();
        assert_eq!(w.samples, vec![0.125; 4]);
    }

    #[test]
    fn malformed_and_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk.wav");
        std::fs::write(&p, b"RIFF\0\0\0\0NOPE").unwrap();
        assert!(matches!(load_wav(&p), Err(Error::Format { .. })));
        let p24 = dir.path().join("p24.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 24,
            sample_format: SampleFormat::Int,
        };
        let mut wr = WavWriter::create(&p24, spec).unwrap();
        wr.write_sample(5i32).unwrap();
        wr.finalize().unwrap();
        assert!(matches!(load_wav(&p24), Err(Error::Format { .. })));
    }
}
