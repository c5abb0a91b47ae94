//! 16-bit PCM mono WAV I/O at a fixed sample rate.

use std::path::Path;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

pub fn read_wav(path: impl AsRef<Path>) -> Result<Vec<f32>> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedAudio(format!(
            "{}: sample rate {} Hz, expected {} Hz",
            path.display(),
            spec.sample_rate,
            SAMPLE_RATE
        )));
    }
    if spec.channels != 1 {
        return Err(Error::UnsupportedAudio(format!(
            "{}: {} channels, expected mono",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedAudio(format!(
            "{}: expected 16-bit PCM",
            path.display()
        )));
    }
    reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0).map_err(|e| wav_err(path, e)))
        .collect()
}

pub fn write_wav(path: impl AsRef<Path>, samples: &[f32]) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v).map_err(|e| wav_err(path, e))?;
    }
    w.finalize().map_err(|e| wav_err(path, e))
}

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::Wav {
            path: path.to_path_buf(),
            source: other,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_quantizes_to_16_bit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let x = vec![0.0, 0.5, -0.25, 1.5, -2.0];
        write_wav(&p, &x).unwrap();
        let y = read_wav(&p).unwrap();
        assert_eq!(y, vec![0.0, 0.5, -0.25, 32767.0 / 32768.0, -1.0]);
    }

    #[test]
    fn other_rates_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&p), Err(Error::UnsupportedAudio(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            read_wav("/nonexistent/x.wav"),
            Err(Error::Io { .. })
        ));
    }
}
