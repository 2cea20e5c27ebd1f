//! Strict WAV reader for the pipeline entry format: RIFF, mono, 16 kHz,
//! 16-bit signed PCM. Anything else is rejected with a descriptive error.

use std::path::Path;

use crate::dsp::Waveform;
use crate::error::{Error, Result};

pub const PIPELINE_SAMPLE_RATE: u32 = 16_000;

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path).map_err(map_hound)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Wav(format!(
            "{}: expected mono, got {} channels",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_rate != PIPELINE_SAMPLE_RATE {
        return Err(Error::Wav(format!(
            "{}: expected {} Hz, got {} Hz",
            path.display(),
            PIPELINE_SAMPLE_RATE,
            spec.sample_rate
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Wav(format!(
            "{}: expected 16-bit signed PCM, got {}-bit {:?}",
            path.display(),
            spec.bits_per_sample,
            spec.sample_format
        )));
    }

    let samples: Vec<f64> = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32768.0))
        .collect::<std::result::Result<_, _>>()
        .map_err(map_hound)?;

    if samples.is_empty() {
        return Err(Error::Wav(format!("{}: no samples", path.display())));
    }

    Ok(Waveform {
        samples,
        sample_rate: PIPELINE_SAMPLE_RATE,
    })
}

/// Write mono 16-bit PCM at 16 kHz. Samples are clamped to [-1, 1].
pub fn write_wav(path: &Path, samples: &[f64]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: PIPELINE_SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(map_hound)?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(map_hound)?;
    }
    writer.finalize().map_err(map_hound)?;
    Ok(())
}

fn map_hound(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::Wav(other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_mono_16k() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tone.wav");
        let samples: Vec<f64> = (0..1600)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16_000.0).sin())
            .collect();
        write_wav(&path, &samples).unwrap();
        let wave = read_wav(&path).unwrap();
        assert_eq!(wave.sample_rate, 16_000);
        assert_eq!(wave.samples.len(), 1600);
        // 16-bit quantization error bound
        for (a, b) in samples.iter().zip(wave.samples.iter()) {
            assert!((a - b).abs() < 1.0 / 32000.0);
        }
    }

    #[test]
    fn rejects_wrong_sample_rate_and_channels() {
        let dir = tempfile::tempdir().unwrap();

        let p8k = dir.path().join("8k.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p8k, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        let err = read_wav(&p8k).unwrap_err();
        assert!(matches!(err, Error::Wav(_)), "got {err:?}");
        assert!(err.to_string().contains("Hz"));

        let pst = dir.path().join("stereo.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&pst, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        let err = read_wav(&pst).unwrap_err();
        assert!(err.to_string().contains("mono"));
    }

    #[test]
    fn rejects_float_wav() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("float.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(0.0f32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&p), Err(Error::Wav(_))));
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = read_wav(Path::new("/nonexistent/nope.wav")).unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }
}
