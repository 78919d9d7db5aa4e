//! WAV encoding. Rendered outputs are 16-bit PCM; corpus audio is stored as float.

use std::io::Cursor;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::Result;

fn pcm16_spec(sample_rate: u32) -> WavSpec {
    WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    }
}

pub fn to_pcm16(x: f32) -> i16 {
    (x.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16
}

/// Mono 16-bit PCM WAV file contents.
pub fn pcm16_bytes(audio: &[f32], sample_rate: u32) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    let mut w = WavWriter::new(&mut out, pcm16_spec(sample_rate))?;
    for &s in audio {
        w.write_sample(to_pcm16(s))?;
    }
    w.finalize()?;
    Ok(out.into_inner())
}

pub fn write_pcm16(path: &Path, audio: &[f32], sample_rate: u32) -> Result<()> {
    std::fs::write(path, pcm16_bytes(audio, sample_rate)?)?;
    Ok(())
}

pub fn write_f32(path: &Path, audio: &[f32], sample_rate: u32) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w = WavWriter::create(path, spec)?;
    for &s in audio {
        w.write_sample(s)?;
    }
    w.finalize()?;
    Ok(())
}

/// Samples of a mono WAV as `f32` in `[-1, 1]`, with its sample rate.
pub fn read_f32(path: &Path) -> Result<(Vec<f32>, u32)> {
    decode(WavReader::open(path)?)
}

pub fn decode_bytes(bytes: &[u8]) -> Result<(Vec<f32>, u32)> {
    decode(WavReader::new(Cursor::new(bytes))?)
}

fn decode<R: std::io::Read>(reader: WavReader<R>) -> Result<(Vec<f32>, u32)> {
    let spec = reader.spec();
    let audio = match spec.sample_format {
        SampleFormat::Float => reader.into_samples::<f32>().collect::<std::result::Result<_, _>>()?,
        SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f32 - 1.0;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f32 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    Ok((audio, spec.sample_rate))
}
