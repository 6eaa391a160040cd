//! Mono PCM audio: WAV I/O, linear resampling and level measurement.

use std::fs;
use std::io::Read;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("audio file not found: {0}")]
    NotFound(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed WAV header: {field}")]
    MalformedHeader { field: &'static str },
    #[error("unsupported WAV codec: {field} = {value}")]
    UnsupportedCodec { field: &'static str, value: u32 },
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("empty clip")]
    Empty,
}

/// Mono audio at a fixed sample rate, stored as 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
    provenance: Option<String>,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::ZeroSampleRate);
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::NonFinite(i));
        }
        Ok(Self {
            samples,
            sample_rate,
            provenance: None,
        })
    }

    /// A clip of `len` zero samples.
    pub fn silence(len: usize, sample_rate: u32) -> Self {
        assert!(sample_rate > 0);
        Self {
            samples: vec![0.0; len],
            sample_rate,
            provenance: None,
        }
    }

    pub fn with_provenance(mut self, source: impl Into<String>) -> Self {
        self.provenance = Some(source.into());
        self
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn provenance(&self) -> Option<&str> {
        self.provenance.as_deref()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Builds a clip with the same rate and provenance around new samples.
    /// Callers guarantee the samples are finite.
    pub(crate) fn with_samples(&self, samples: Vec<f64>) -> Self {
        debug_assert!(samples.iter().all(|s| s.is_finite()));
        Self {
            samples,
            sample_rate: self.sample_rate,
            provenance: self.provenance.clone(),
        }
    }
}

/// Reads a PCM16 or IEEE-float32 WAV file, mono or stereo.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip, AudioError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => AudioError::NotFound(display.clone()),
        _ => AudioError::Io {
            path: display.clone(),
            source: e,
        },
    })?;
    Ok(decode_wav(&bytes)?.with_provenance(display))
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

struct Format {
    codec: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

/// Decodes an in-memory WAV file.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip, AudioError> {
    if bytes.len() < 12 {
        return Err(AudioError::MalformedHeader { field: "riff header" });
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(AudioError::MalformedHeader { field: "RIFF tag" });
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(AudioError::MalformedHeader { field: "WAVE tag" });
    }

    let mut format: Option<Format> = None;
    let mut data: Option<&[u8]> = None;
    let mut at = 12;
    while at + 8 <= bytes.len() {
        let id = &bytes[at..at + 4];
        let size = le_u32(bytes, at + 4) as usize;
        let body_start = at + 8;
        // A truncated final data chunk is tolerated; anything else must fit.
        let body_end = body_start.saturating_add(size).min(bytes.len());
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(AudioError::MalformedHeader { field: "fmt chunk size" });
                }
                let mut codec = le_u16(body, 0);
                if codec == 0xFFFE {
                    if body.len() < 26 {
                        return Err(AudioError::MalformedHeader { field: "extensible subformat" });
                    }
                    codec = le_u16(body, 24);
                }
                format = Some(Format {
                    codec,
                    channels: le_u16(body, 2),
                    sample_rate: le_u32(body, 4),
                    bits: le_u16(body, 14),
                });
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are word aligned.
        at = body_start.saturating_add(size).saturating_add(size & 1);
    }

    let format = format.ok_or(AudioError::MalformedHeader { field: "fmt chunk" })?;
    let data = data.ok_or(AudioError::MalformedHeader { field: "data chunk" })?;
    if format.channels == 0 || format.channels > 2 {
        return Err(AudioError::UnsupportedCodec {
            field: "channels",
            value: format.channels as u32,
        });
    }
    if format.sample_rate == 0 {
        return Err(AudioError::MalformedHeader { field: "sample rate" });
    }
    let channels = format.channels as usize;
    let interleaved: Vec<f64> = match (format.codec, format.bits) {
        (1, 16) => data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
            .collect(),
        (3, 32) => data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        (1, bits) | (3, bits) => {
            return Err(AudioError::UnsupportedCodec {
                field: "bits per sample",
                value: bits as u32,
            })
        }
        (codec, _) => {
            return Err(AudioError::UnsupportedCodec {
                field: "audio format",
                value: codec as u32,
            })
        }
    };
    let samples: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    AudioClip::new(samples, format.sample_rate)
}

/// Quantizes one float sample to 16-bit PCM.
pub fn quantize_pcm16(sample: f64) -> i16 {
    // Scale by 32768 (the decode divisor) so decode(encode(x)) is within one LSB.
    (sample.clamp(-1.0, 1.0) * 32768.0)
        .round()
        .clamp(-32768.0, 32767.0) as i16
}

/// Encodes a clip as a 16-bit PCM mono WAV file.
pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = clip.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate().to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in clip.samples() {
        out.extend_from_slice(&quantize_pcm16(s).to_le_bytes());
    }
    out
}

pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<(), AudioError> {
    let path = path.as_ref();
    fs::write(path, encode_wav(clip)).map_err(|source| AudioError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads raw 16-bit little-endian mono PCM (e.g. piped on stdin).
pub fn read_pcm16_le(mut reader: impl Read, sample_rate: u32) -> Result<AudioClip, AudioError> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes).map_err(|source| AudioError::Io {
        path: "<stream>".into(),
        source,
    })?;
    let samples = bytes
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
        .collect();
    AudioClip::new(samples, sample_rate)
}

/// Linear interpolation of `samples` onto `out_len` points spanning the same
/// time range. `step` is the input distance between output points.
pub(crate) fn interpolate(samples: &[f64], out_len: usize, step: f64) -> Vec<f64> {
    if samples.is_empty() {
        return vec![0.0; out_len];
    }
    let last = samples.len() - 1;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let left = pos.floor() as usize;
            if left >= last {
                return samples[last];
            }
            let frac = pos - left as f64;
            samples[left] + (samples[left + 1] - samples[left]) * frac
        })
        .collect()
}

/// Linear-interpolation resampling.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip, AudioError> {
    if target_rate == 0 {
        return Err(AudioError::ZeroSampleRate);
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let ratio = clip.sample_rate as f64 / target_rate as f64;
    let out_len = (clip.len() as f64 / ratio).round() as usize;
    let samples = interpolate(clip.samples(), out_len, ratio);
    Ok(AudioClip {
        samples,
        sample_rate: target_rate,
        provenance: clip.provenance.clone(),
    })
}

pub fn rms(clip: &AudioClip) -> Result<f64, AudioError> {
    rms_of(clip.samples()).ok_or(AudioError::Empty)
}

pub(crate) fn rms_of(samples: &[f64]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    Some((samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64).sqrt())
}
