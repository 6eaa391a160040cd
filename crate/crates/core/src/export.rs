//! The `LUME` model blob and the golden-vector file.
//!
//! Both formats are little-endian throughout; byte tables live in
//! `docs/FORMATS.md`.

use std::path::Path;

use rand::Rng as _;
use thiserror::Error;

use crate::audio::{self, AudioClip};
use crate::features::{MfccConfig, NormStats};
use crate::nn::{Activation, LayerParams, LayerSpec, Layout, ModelSpec, ModelWeights, NUM_CLASSES};
use crate::pipeline::{Pipeline, PipelineError, TrainedModel};
use crate::seed;

pub const MAGIC: &[u8; 4] = b"LUME";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 60;
pub const LAYER_ENTRY_LEN: usize = 24;

pub const GOLDEN_MAGIC: &[u8; 4] = b"LGV1";
pub const GOLDEN_HEADER_LEN: usize = 16;
pub const GOLDEN_RECORD_HEADER_LEN: usize = 8;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("layer {index} ({kind}) is unsupported for export")]
    Unsupported { index: usize, kind: &'static str },
    #[error("threshold must be in (0, 1), got {0}")]
    BadThreshold(f64),
    #[error("{field} = {value} does not fit the blob field")]
    Overflow { field: &'static str, value: usize },
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("blob is {actual} bytes, header declares {declared}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("blob truncated: {0} bytes")]
    Truncated(usize),
    #[error("CRC mismatch: stored {stored:08x}, computed {computed:08x}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("malformed blob: {0}")]
    Malformed(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExportError + '_ {
    move |source| ExportError::Io {
        path: path.display().to_string(),
        source,
    }
}

mod kind {
    pub const RESHAPE: u8 = 0;
    pub const CONV1D: u8 = 1;
    pub const MAXPOOL1D: u8 = 2;
    pub const DROPOUT: u8 = 3;
    pub const FLATTEN: u8 = 4;
    pub const DENSE: u8 = 5;
}

fn act_code(a: Activation) -> u8 {
    match a {
        Activation::None => 0,
        Activation::Relu => 1,
        Activation::Softmax => 2,
    }
}

fn act_from(code: u8) -> Result<Activation, ExportError> {
    Ok(match code {
        0 => Activation::None,
        1 => Activation::Relu,
        2 => Activation::Softmax,
        c => return Err(ExportError::Malformed(format!("activation code {c}"))),
    })
}

fn u16_field(field: &'static str, value: usize) -> Result<u16, ExportError> {
    u16::try_from(value).map_err(|_| ExportError::Overflow { field, value })
}

fn u32_field(field: &'static str, value: usize) -> Result<u32, ExportError> {
    u32::try_from(value).map_err(|_| ExportError::Overflow { field, value })
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f64) {
        self.0.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Serializes a trained model. Identical inputs give identical bytes.
pub fn encode_model(model: &TrainedModel) -> Result<Vec<u8>, ExportError> {
    model.validate()?;
    if !(model.threshold > 0.0 && model.threshold < 1.0) {
        return Err(ExportError::BadThreshold(model.threshold));
    }
    let spec = &model.spec;
    let mut table = Vec::with_capacity(spec.layers.len());
    let mut offset = 0usize;
    for (index, (layer, params)) in spec.layers.iter().zip(&model.weights.layers).enumerate() {
        let count = params.as_ref().map_or(0, |p| p.kernel.len() + p.bias.len());
        let (k, act, p0, p1, p2) = match *layer {
            LayerSpec::Reshape { layout: Layout::Sequence } => (kind::RESHAPE, 0, 0, 0, 0),
            LayerSpec::Conv1d {
                filters,
                kernel,
                stride,
                activation,
            } => (kind::CONV1D, act_code(activation), filters, kernel, stride),
            LayerSpec::MaxPool1d { size } => (kind::MAXPOOL1D, 0, size, 0, 0),
            LayerSpec::Dropout { rate } => (kind::DROPOUT, 0, (rate as f32).to_bits() as usize, 0, 0),
            LayerSpec::Flatten => (kind::FLATTEN, 0, 0, 0, 0),
            LayerSpec::Dense { units, activation } => (kind::DENSE, act_code(activation), units, 0, 0),
            LayerSpec::Reshape { layout: Layout::Image } => return Err(ExportError::Unsupported { index, kind: "reshape to image" }),
            LayerSpec::Conv2d { .. } => return Err(ExportError::Unsupported { index, kind: "conv2d" }),
            LayerSpec::MaxPool2d { .. } => return Err(ExportError::Unsupported { index, kind: "maxpool2d" }),
        };
        table.push((k, act, p0, p1, p2, offset, count));
        offset += count;
    }
    let coeffs = model.mfcc.num_cepstral_coeffs;
    let total = HEADER_LEN + 2 * 4 * coeffs + LAYER_ENTRY_LEN * table.len() + 4 * offset + 4;

    let mut w = Writer(Vec::with_capacity(total));
    w.0.extend_from_slice(MAGIC);
    w.u16(FORMAT_VERSION);
    w.u16(0);
    w.u32(u32_field("total_length", total)?);
    w.u32(model.sample_rate);
    w.u32(u32_field("window_samples", model.window_samples)?);
    let m = &model.mfcc;
    w.f32(m.frame_length_s);
    w.f32(m.frame_stride_s);
    w.u16(u16_field("num_mel_filters", m.num_mel_filters)?);
    w.u16(u16_field("num_cepstral_coeffs", coeffs)?);
    w.u16(u16_field("fft_size", m.fft_size)?);
    w.u16(0);
    w.f32(m.pre_emphasis);
    w.f32(m.low_freq_hz);
    w.f32(m.high_freq(model.sample_rate));
    w.f32(model.threshold);
    w.u16(u16_field("input_frames", spec.input_frames)?);
    w.u16(u16_field("input_coeffs", spec.input_coeffs)?);
    w.u16(u16_field("num_layers", table.len())?);
    w.u16(NUM_CLASSES as u16);
    debug_assert_eq!(w.0.len(), HEADER_LEN);
    for v in &model.stats.mean {
        w.f32(*v);
    }
    for v in &model.stats.std {
        w.f32(*v);
    }
    for &(k, act, p0, p1, p2, off, count) in &table {
        w.u8(k);
        w.u8(act);
        w.u16(0);
        w.u32(u32_field("layer parameter", p0)?);
        w.u32(u32_field("layer parameter", p1)?);
        w.u32(u32_field("layer parameter", p2)?);
        w.u32(u32_field("weight offset", off)?);
        w.u32(u32_field("weight count", count)?);
    }
    for v in model.weights.iter() {
        w.f32(*v);
    }
    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    debug_assert_eq!(w.0.len(), total);
    Ok(w.0)
}

pub fn export_model(model: &TrainedModel, path: &Path) -> Result<(), ExportError> {
    let bytes = encode_model(model)?;
    std::fs::write(path, bytes).map_err(io_err(path))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], ExportError> {
        let end = self.pos + n;
        let s = self.bytes.get(self.pos..end).ok_or(ExportError::Truncated(self.bytes.len()))?;
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, ExportError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, ExportError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, ExportError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f64, ExportError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64)
    }
}

/// Parses and verifies a blob. Checks run in order: size, magic, version,
/// declared length, CRC, then structure.
pub fn decode_model(bytes: &[u8]) -> Result<TrainedModel, ExportError> {
    if bytes.len() < HEADER_LEN + 4 {
        return Err(ExportError::Truncated(bytes.len()));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(ExportError::BadMagic(magic));
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(ExportError::UnsupportedVersion(version));
    }
    let _flags = r.u16()?;
    let declared = r.u32()? as usize;
    if declared != bytes.len() {
        return Err(ExportError::LengthMismatch {
            declared,
            actual: bytes.len(),
        });
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(ExportError::CrcMismatch { stored, computed });
    }
    let mut r = Reader { bytes: body, pos: 12 };

    let sample_rate = r.u32()?;
    let window_samples = r.u32()? as usize;
    let frame_length_s = r.f32()?;
    let frame_stride_s = r.f32()?;
    let num_mel_filters = r.u16()? as usize;
    let num_cepstral_coeffs = r.u16()? as usize;
    let fft_size = r.u16()? as usize;
    let _reserved = r.u16()?;
    let pre_emphasis = r.f32()?;
    let low_freq_hz = r.f32()?;
    let high_freq_hz = r.f32()?;
    let threshold = r.f32()?;
    let input_frames = r.u16()? as usize;
    let input_coeffs = r.u16()? as usize;
    let num_layers = r.u16()? as usize;
    let classes = r.u16()? as usize;
    if classes != NUM_CLASSES {
        return Err(ExportError::Malformed(format!("{classes} classes")));
    }
    let mfcc = MfccConfig {
        frame_length_s,
        frame_stride_s,
        num_mel_filters,
        num_cepstral_coeffs,
        fft_size,
        pre_emphasis,
        low_freq_hz,
        high_freq_hz: Some(high_freq_hz),
    };
    let mean = (0..num_cepstral_coeffs).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
    let std = (0..num_cepstral_coeffs).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;

    let mut layers = Vec::with_capacity(num_layers);
    let mut entries = Vec::with_capacity(num_layers);
    for _ in 0..num_layers {
        let k = r.u8()?;
        let act = act_from(r.u8()?)?;
        let _ = r.u16()?;
        let (p0, p1, p2) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let (offset, count) = (r.u32()? as usize, r.u32()? as usize);
        layers.push(match k {
            kind::RESHAPE => LayerSpec::Reshape { layout: Layout::Sequence },
            kind::CONV1D => LayerSpec::Conv1d {
                filters: p0,
                kernel: p1,
                stride: p2,
                activation: act,
            },
            kind::MAXPOOL1D => LayerSpec::MaxPool1d { size: p0 },
            kind::DROPOUT => LayerSpec::Dropout {
                rate: f32::from_bits(p0 as u32) as f64,
            },
            kind::FLATTEN => LayerSpec::Flatten,
            kind::DENSE => LayerSpec::Dense { units: p0, activation: act },
            other => return Err(ExportError::Malformed(format!("layer kind {other}"))),
        });
        entries.push((offset, count));
    }
    let spec = ModelSpec {
        input_frames,
        input_coeffs,
        layers,
    };
    let shapes = spec.param_shapes().map_err(|e| ExportError::Malformed(e.to_string()))?;
    let weights_start = r.pos;
    let total_weights = (body.len() - weights_start) / 4;
    if (body.len() - weights_start) % 4 != 0 {
        return Err(ExportError::Malformed("weight section is not whole floats".into()));
    }
    let mut expected_offset = 0;
    let mut weight_layers = Vec::with_capacity(num_layers);
    for ((k, b), (offset, count)) in shapes.iter().zip(&entries) {
        if *count != k + b || *offset != expected_offset || offset + count > total_weights {
            return Err(ExportError::Malformed("layer table does not match the layer shapes".into()));
        }
        expected_offset += count;
        weight_layers.push(if *count == 0 {
            None
        } else {
            let mut rr = Reader {
                bytes: body,
                pos: weights_start + 4 * offset,
            };
            let values = (0..*count).map(|_| rr.f32()).collect::<Result<Vec<_>, _>>()?;
            Some(LayerParams {
                kernel: values[..*k].to_vec(),
                bias: values[*k..].to_vec(),
            })
        });
    }
    if expected_offset != total_weights {
        return Err(ExportError::Malformed("trailing weight data".into()));
    }
    let model = TrainedModel {
        sample_rate,
        window_samples,
        stats: NormStats {
            mean,
            std,
            fingerprint: mfcc.fingerprint(sample_rate, window_samples),
        },
        mfcc,
        spec,
        weights: ModelWeights { layers: weight_layers },
        threshold,
    };
    model.validate()?;
    Ok(model)
}

pub fn load_model(path: &Path) -> Result<TrainedModel, ExportError> {
    decode_model(&std::fs::read(path).map_err(io_err(path))?)
}

/// Loads a blob into a runnable pipeline.
pub fn load_exported(path: &Path) -> Result<Pipeline, ExportError> {
    Ok(Pipeline::new(load_model(path)?)?)
}

/// Kind of synthetic audio in a golden record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum GoldenKind {
    Noise = 0,
    Tone = 1,
    Mix = 2,
    Silence = 3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoldenRecord {
    pub index: u32,
    pub kind: u32,
    pub pcm: Vec<i16>,
    pub probabilities: [f32; NUM_CLASSES],
}

fn golden_window(kind: GoldenKind, n: usize, rate: u32, rng: &mut seed::Rng) -> Vec<f64> {
    let tone = |rng: &mut seed::Rng| {
        let f = rng.random_range(100.0..4000.0);
        let a = rng.random_range(0.05..0.6);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        (0..n)
            .map(|i| a * (std::f64::consts::TAU * f * i as f64 / rate as f64 + phase).sin())
            .collect::<Vec<f64>>()
    };
    match kind {
        GoldenKind::Silence => vec![0.0; n],
        GoldenKind::Noise => {
            let a = rng.random_range(0.001..0.3);
            (0..n).map(|_| rng.random_range(-a..=a)).collect()
        }
        GoldenKind::Tone => tone(rng),
        GoldenKind::Mix => {
            let mut s = tone(rng);
            let t2 = tone(rng);
            let a = rng.random_range(0.001..0.1);
            for (x, y) in s.iter_mut().zip(t2) {
                *x = (*x + y + rng.random_range(-a..=a)).clamp(-1.0, 1.0);
            }
            s
        }
    }
}

/// Builds golden records: seeded windows quantized to PCM16, with the
/// probabilities the pipeline assigns to the dequantized audio.
pub fn golden_vectors(pipeline: &Pipeline, count: usize, seed: u64) -> Result<Vec<GoldenRecord>, ExportError> {
    let m = pipeline.model();
    let kinds = [GoldenKind::Silence, GoldenKind::Noise, GoldenKind::Tone, GoldenKind::Mix];
    (0..count)
        .map(|i| {
            let mut rng = seed::rng(seed::derive(seed, i as u64));
            let kind = kinds[i % kinds.len()];
            let window = golden_window(kind, m.window_samples, m.sample_rate, &mut rng);
            let pcm: Vec<i16> = window.iter().map(|&s| audio::quantize_pcm16(s)).collect();
            let clip = AudioClip::new(pcm.iter().map(|&v| v as f64 / 32768.0).collect(), m.sample_rate)
                .expect("dequantized PCM is in range");
            let probs = pipeline.classify_clip(&clip)?;
            let mut probabilities = [0.0f32; NUM_CLASSES];
            for (o, p) in probabilities.iter_mut().zip(&probs) {
                *o = *p as f32;
            }
            Ok(GoldenRecord {
                index: i as u32,
                kind: kind as u32,
                pcm,
                probabilities,
            })
        })
        .collect()
}

pub fn encode_golden(records: &[GoldenRecord], sample_rate: u32, window_samples: usize) -> Vec<u8> {
    let mut w = Writer(Vec::with_capacity(
        GOLDEN_HEADER_LEN + records.len() * (GOLDEN_RECORD_HEADER_LEN + 2 * window_samples + 4 * NUM_CLASSES),
    ));
    w.0.extend_from_slice(GOLDEN_MAGIC);
    w.u32(records.len() as u32);
    w.u32(sample_rate);
    w.u32(window_samples as u32);
    for r in records {
        w.u32(r.index);
        w.u32(r.kind);
        for s in &r.pcm {
            w.0.extend_from_slice(&s.to_le_bytes());
        }
        for p in &r.probabilities {
            w.0.extend_from_slice(&p.to_le_bytes());
        }
    }
    w.0
}

/// Parses a golden file into (sample rate, window samples, records).
pub fn decode_golden(bytes: &[u8]) -> Result<(u32, usize, Vec<GoldenRecord>), ExportError> {
    if bytes.len() < GOLDEN_HEADER_LEN {
        return Err(ExportError::Truncated(bytes.len()));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != GOLDEN_MAGIC {
        return Err(ExportError::BadMagic(magic));
    }
    let mut r = Reader { bytes, pos: 4 };
    let count = r.u32()? as usize;
    let rate = r.u32()?;
    let window = r.u32()? as usize;
    let record_len = GOLDEN_RECORD_HEADER_LEN + 2 * window + 4 * NUM_CLASSES;
    let expected = GOLDEN_HEADER_LEN + count * record_len;
    if bytes.len() != expected {
        return Err(ExportError::LengthMismatch {
            declared: expected,
            actual: bytes.len(),
        });
    }
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let index = r.u32()?;
        let kind = r.u32()?;
        let pcm = r
            .take(2 * window)?
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]))
            .collect();
        let mut probabilities = [0.0f32; NUM_CLASSES];
        for p in probabilities.iter_mut() {
            *p = f32::from_le_bytes(r.take(4)?.try_into().unwrap());
        }
        records.push(GoldenRecord {
            index,
            kind,
            pcm,
            probabilities,
        });
    }
    Ok((rate, window, records))
}

/// Writes `count` golden records for the blob at `model_path`.
pub fn emit_golden_vectors(model_path: &Path, count: usize, seed: u64, out_path: &Path) -> Result<(), ExportError> {
    let pipeline = load_exported(model_path)?;
    let records = golden_vectors(&pipeline, count, seed)?;
    let m = pipeline.model();
    let bytes = encode_golden(&records, m.sample_rate, m.window_samples);
    std::fs::write(out_path, bytes).map_err(io_err(out_path))
}
