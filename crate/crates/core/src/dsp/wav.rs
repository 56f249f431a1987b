use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Reads a 16-bit integer or 32-bit float PCM WAV file and mixes it down to
/// mono. Only 16 kHz input is accepted.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let wav_err = |message: String| Error::Wav {
        path: path.to_path_buf(),
        message,
    };
    let reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => wav_err(other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedSampleRate(spec.sample_rate));
    }
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(wav_err("zero channels".into()));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(|e| wav_err(e.to_string()))?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(|e| wav_err(e.to_string()))?,
        (format, bits) => {
            return Err(wav_err(format!(
                "unsupported encoding {format:?} {bits}-bit (need 16-bit int or 32-bit float)"
            )))
        }
    };
    let samples: Vec<f32> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect();
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(wav_err("non-finite sample".into()));
    }
    Ok(Waveform::new(samples, spec.sample_rate))
}

/// Writes mono 16-bit PCM. Samples are clipped to [-1, 1].
pub fn write_wav_i16(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &wave.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(path: &Path, spec: WavSpec, frames: &[Vec<f32>]) {
        let mut w = WavWriter::create(path, spec).unwrap();
        for frame in frames {
            for &s in frame {
                match spec.sample_format {
                    SampleFormat::Int => w.write_sample((s * 32767.0) as i16).unwrap(),
                    SampleFormat::Float => w.write_sample(s).unwrap(),
                }
            }
        }
        w.finalize().unwrap();
    }

    fn spec(channels: u16, rate: u32, format: SampleFormat) -> WavSpec {
        WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: if format == SampleFormat::Int { 16 } else { 32 },
            sample_format: format,
        }
    }

    #[test]
    fn mono_passthrough() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let frames: Vec<Vec<f32>> = (0..1600).map(|i| vec![(i as f32 * 0.01).sin()]).collect();
        write(&p, spec(1, 16000, SampleFormat::Float), &frames);
        let w = load_wav(&p).unwrap();
        assert_eq!(w.sample_rate, 16000);
        assert_eq!(w.len(), 1600);
        assert_eq!(w.samples[7], (7.0f32 * 0.01).sin());
    }

    #[test]
    fn antiphase_stereo_averages_to_silence() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let frames: Vec<Vec<f32>> = (0..500)
            .map(|i| {
                let a = ((i % 17) as f32 / 17.0) - 0.5;
                vec![a, -a]
            })
            .collect();
        write(&p, spec(2, 16000, SampleFormat::Int), &frames);
        let w = load_wav(&p).unwrap();
        assert_eq!(w.len(), 500);
        assert!(w.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_44k() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("hi.wav");
        write(&p, spec(1, 44100, SampleFormat::Int), &vec![vec![0.0]; 10]);
        let err = load_wav(&p).unwrap_err();
        assert!(err.to_string().contains("unsupported sample rate"));
    }

    #[test]
    fn rejects_24_bit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("24.wav");
        let s = WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 24,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&p, s).unwrap();
        w.write_sample(5i32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_wav(&p), Err(Error::Wav { .. })));
    }

    #[test]
    fn missing_file_reports_path() {
        let err = load_wav("/nonexistent/x.wav").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.wav"));
    }

    #[test]
    fn i16_write_read_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.wav");
        let w = Waveform::new(vec![0.0, 0.5, -0.5, 1.0], 16000);
        write_wav_i16(&p, &w).unwrap();
        let r = load_wav(&p).unwrap();
        for (a, b) in w.samples.iter().zip(&r.samples) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}
