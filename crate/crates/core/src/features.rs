//! MFCC front end.
//!
//! pre-emphasis → framing → Hamming → |FFT|² → mel filterbank → log → DCT-II
//! (orthonormal). One [`FeatureMatrix`] describes one classification window.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;

/// Floor added before the logarithm so silence stays finite.
pub const LOG_FLOOR: f64 = 1e-10;
/// Smallest standard deviation used when normalizing.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("frequency must be non-negative, got {0}")]
    NegativeFrequency(f64),
    #[error("invalid MFCC config: {0}")]
    InvalidConfig(String),
    #[error("window has {actual} samples, expected {expected}")]
    WrongWindowLength { expected: usize, actual: usize },
    #[error("sample rate {actual} Hz does not match extractor rate {expected} Hz")]
    RateMismatch { expected: u32, actual: u32 },
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("feature fingerprint {features:016x} does not match statistics {stats:016x}")]
    FingerprintMismatch { features: u64, stats: u64 },
    #[error("features are already normalized")]
    AlreadyNormalized,
    #[error("no feature frames to fit statistics on")]
    NoFrames,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MfccConfig {
    pub frame_length_s: f64,
    pub frame_stride_s: f64,
    pub num_mel_filters: usize,
    pub num_cepstral_coeffs: usize,
    pub fft_size: usize,
    pub pre_emphasis: f64,
    pub low_freq_hz: f64,
    /// `None` means Nyquist.
    pub high_freq_hz: Option<f64>,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            frame_length_s: 0.032,
            frame_stride_s: 0.032,
            num_mel_filters: 40,
            num_cepstral_coeffs: 13,
            fft_size: 512,
            pre_emphasis: 0.97,
            low_freq_hz: 0.0,
            high_freq_hz: None,
        }
    }
}

impl MfccConfig {
    pub fn frame_samples(&self, sample_rate: u32) -> usize {
        (self.frame_length_s * sample_rate as f64).round() as usize
    }

    pub fn stride_samples(&self, sample_rate: u32) -> usize {
        (self.frame_stride_s * sample_rate as f64).round() as usize
    }

    pub fn high_freq(&self, sample_rate: u32) -> f64 {
        self.high_freq_hz.unwrap_or(sample_rate as f64 / 2.0)
    }

    /// Frames produced for a window of `window_samples` samples.
    pub fn num_frames(&self, sample_rate: u32, window_samples: usize) -> usize {
        let frame = self.frame_samples(sample_rate);
        let stride = self.stride_samples(sample_rate);
        if window_samples < frame || stride == 0 {
            0
        } else {
            (window_samples - frame) / stride + 1
        }
    }

    pub fn validate(&self, sample_rate: u32) -> Result<(), FeatureError> {
        let bad = |m: &str| Err(FeatureError::InvalidConfig(m.to_string()));
        let frame = self.frame_samples(sample_rate);
        if frame == 0 || self.stride_samples(sample_rate) == 0 {
            return bad("frame length and stride must be at least one sample");
        }
        if frame > self.fft_size {
            return bad("frame_length_s * sample_rate exceeds fft_size");
        }
        if self.fft_size < 2 {
            return bad("fft_size must be at least 2");
        }
        if self.num_mel_filters == 0 {
            return bad("num_mel_filters must be positive");
        }
        if self.num_cepstral_coeffs == 0 || self.num_cepstral_coeffs > self.num_mel_filters {
            return bad("num_cepstral_coeffs must be in 1..=num_mel_filters");
        }
        let nyquist = sample_rate as f64 / 2.0;
        let high = self.high_freq(sample_rate);
        if !(self.low_freq_hz >= 0.0 && self.low_freq_hz < high && high <= nyquist) {
            return bad("frequency band must satisfy 0 <= low < high <= nyquist");
        }
        if !(0.0..1.0).contains(&self.pre_emphasis) {
            return bad("pre_emphasis must be in [0, 1)");
        }
        Ok(())
    }

    /// Stable hash of the config, the sample rate and the window length.
    pub fn fingerprint(&self, sample_rate: u32, window_samples: usize) -> u64 {
        let mut h = Fnv64::new();
        h.write_f64(self.frame_length_s);
        h.write_f64(self.frame_stride_s);
        h.write_u64(self.num_mel_filters as u64);
        h.write_u64(self.num_cepstral_coeffs as u64);
        h.write_u64(self.fft_size as u64);
        h.write_f64(self.pre_emphasis);
        h.write_f64(self.low_freq_hz);
        h.write_f64(self.high_freq(sample_rate));
        h.write_u64(sample_rate as u64);
        h.write_u64(window_samples as u64);
        h.finish()
    }
}

struct Fnv64(u64);

impl Fnv64 {
    fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }
    fn write_u64(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 = (self.0 ^ b as u64).wrapping_mul(0x0100_0000_01b3);
        }
    }
    fn write_f64(&mut self, v: f64) {
        self.write_u64(v.to_bits());
    }
    fn finish(&self) -> u64 {
        self.0
    }
}

pub fn mel_scale(hz: f64) -> Result<f64, FeatureError> {
    if hz < 0.0 || hz.is_nan() {
        return Err(FeatureError::NegativeFrequency(hz));
    }
    Ok(2595.0 * (1.0 + hz / 700.0).log10())
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters, one row of `fft_size / 2 + 1` weights per filter.
#[derive(Debug, Clone)]
pub struct Filterbank {
    pub weights: Vec<Vec<f64>>,
    /// Center frequency of each filter in Hz.
    pub centers_hz: Vec<f64>,
}

pub fn build_filterbank(config: &MfccConfig, sample_rate: u32) -> Result<Filterbank, FeatureError> {
    config.validate(sample_rate)?;
    let filters = config.num_mel_filters;
    let bins = config.fft_size / 2 + 1;
    let low = mel_scale(config.low_freq_hz)?;
    let high = mel_scale(config.high_freq(sample_rate))?;
    let edges: Vec<f64> = (0..filters + 2)
        .map(|k| mel_to_hz(low + k as f64 * (high - low) / (filters + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / config.fft_size as f64;
    let weights = (0..filters)
        .map(|f| {
            let (left, center, right) = (edges[f], edges[f + 1], edges[f + 2]);
            (0..bins)
                .map(|b| {
                    let hz = b as f64 * bin_hz;
                    if hz <= left || hz >= right {
                        0.0
                    } else if hz <= center {
                        (hz - left) / (center - left)
                    } else {
                        (right - hz) / (right - center)
                    }
                })
                .collect()
        })
        .collect();
    Ok(Filterbank {
        weights,
        centers_hz: edges[1..=filters].to_vec(),
    })
}

/// Frames × coefficients, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub values: Vec<f64>,
    pub num_frames: usize,
    pub num_coeffs: usize,
    pub fingerprint: u64,
    #[serde(default)]
    pub normalized: bool,
}

impl FeatureMatrix {
    pub fn row(&self, frame: usize) -> &[f64] {
        &self.values[frame * self.num_coeffs..(frame + 1) * self.num_coeffs]
    }

    pub fn get(&self, frame: usize, coeff: usize) -> f64 {
        self.values[frame * self.num_coeffs + coeff]
    }
}

/// Precomputed MFCC pipeline for one (config, sample rate, window length).
#[derive(Clone)]
pub struct MfccExtractor {
    config: MfccConfig,
    sample_rate: u32,
    window_samples: usize,
    frame: usize,
    stride: usize,
    num_frames: usize,
    hamming: Vec<f64>,
    filterbank: Filterbank,
    dct: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
    fingerprint: u64,
}

impl std::fmt::Debug for MfccExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MfccExtractor")
            .field("config", &self.config)
            .field("sample_rate", &self.sample_rate)
            .field("window_samples", &self.window_samples)
            .finish()
    }
}

/// Symmetric Hamming window.
pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Orthonormal DCT-II basis rows for the first `coeffs` outputs.
fn dct_basis(inputs: usize, coeffs: usize) -> Vec<Vec<f64>> {
    let n = inputs as f64;
    (0..coeffs)
        .map(|k| {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            (0..inputs)
                .map(|i| scale * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos())
                .collect()
        })
        .collect()
}

impl MfccExtractor {
    pub fn new(config: &MfccConfig, sample_rate: u32, window_samples: usize) -> Result<Self, FeatureError> {
        config.validate(sample_rate)?;
        let frame = config.frame_samples(sample_rate);
        let num_frames = config.num_frames(sample_rate, window_samples);
        if num_frames == 0 {
            return Err(FeatureError::InvalidConfig(format!(
                "window of {window_samples} samples is shorter than one frame"
            )));
        }
        Ok(Self {
            config: config.clone(),
            sample_rate,
            window_samples,
            frame,
            stride: config.stride_samples(sample_rate),
            num_frames,
            hamming: hamming(frame),
            filterbank: build_filterbank(config, sample_rate)?,
            dct: dct_basis(config.num_mel_filters, config.num_cepstral_coeffs),
            fft: FftPlanner::new().plan_fft_forward(config.fft_size),
            fingerprint: config.fingerprint(sample_rate, window_samples),
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.config
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn window_samples(&self) -> usize {
        self.window_samples
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_coeffs(&self) -> usize {
        self.config.num_cepstral_coeffs
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn filterbank(&self) -> &Filterbank {
        &self.filterbank
    }

    fn check(&self, samples: &[f64]) -> Result<(), FeatureError> {
        if samples.len() != self.window_samples {
            return Err(FeatureError::WrongWindowLength {
                expected: self.window_samples,
                actual: samples.len(),
            });
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(FeatureError::NonFinite(i));
        }
        Ok(())
    }

    /// Pre-emphasized, Hamming-windowed frames (unpadded).
    pub fn windowed_frames(&self, samples: &[f64]) -> Result<Vec<Vec<f64>>, FeatureError> {
        self.check(samples)?;
        let a = self.config.pre_emphasis;
        let emphasized: Vec<f64> = samples
            .iter()
            .enumerate()
            .map(|(i, &x)| if i == 0 { x } else { x - a * samples[i - 1] })
            .collect();
        Ok((0..self.num_frames)
            .map(|t| {
                let start = t * self.stride;
                emphasized[start..start + self.frame]
                    .iter()
                    .zip(&self.hamming)
                    .map(|(x, w)| x * w)
                    .collect()
            })
            .collect())
    }

    /// Full-length |FFT|² of one zero-padded frame.
    pub fn power_spectrum(&self, frame: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = frame.iter().map(|&x| Complex::new(x, 0.0)).collect();
        buf.resize(self.config.fft_size, Complex::new(0.0, 0.0));
        self.fft.process(&mut buf);
        buf.iter().map(|c| c.norm_sqr()).collect()
    }

    /// Mel filterbank energies, frames × filters.
    pub fn filterbank_energies(&self, samples: &[f64]) -> Result<Vec<Vec<f64>>, FeatureError> {
        let bins = self.config.fft_size / 2 + 1;
        let n = self.config.fft_size as f64;
        Ok(self
            .windowed_frames(samples)?
            .iter()
            .map(|frame| {
                let power = self.power_spectrum(frame);
                self.filterbank
                    .weights
                    .iter()
                    .map(|row| row.iter().zip(&power[..bins]).map(|(w, p)| w * p / n).sum())
                    .collect()
            })
            .collect())
    }

    pub fn compute(&self, samples: &[f64]) -> Result<FeatureMatrix, FeatureError> {
        let energies = self.filterbank_energies(samples)?;
        let coeffs = self.config.num_cepstral_coeffs;
        let mut values = Vec::with_capacity(self.num_frames * coeffs);
        for frame in energies {
            let logs: Vec<f64> = frame.iter().map(|e| (e + LOG_FLOOR).ln()).collect();
            for basis in &self.dct {
                values.push(basis.iter().zip(&logs).map(|(b, l)| b * l).sum());
            }
        }
        Ok(FeatureMatrix {
            values,
            num_frames: self.num_frames,
            num_coeffs: coeffs,
            fingerprint: self.fingerprint,
            normalized: false,
        })
    }

    pub fn compute_clip(&self, clip: &AudioClip) -> Result<FeatureMatrix, FeatureError> {
        if clip.sample_rate() != self.sample_rate {
            return Err(FeatureError::RateMismatch {
                expected: self.sample_rate,
                actual: clip.sample_rate(),
            });
        }
        self.compute(clip.samples())
    }
}

/// One-shot MFCC of a window. The window length is the clip length, which must
/// produce at least one frame.
pub fn compute_mfcc(clip: &AudioClip, config: &MfccConfig, window_s: f64) -> Result<FeatureMatrix, FeatureError> {
    let expected = (window_s * clip.sample_rate() as f64).round() as usize;
    MfccExtractor::new(config, clip.sample_rate(), expected)?.compute_clip(clip)
}

/// Per-coefficient mean and standard deviation fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub fingerprint: u64,
}

impl NormStats {
    /// Fits mean and population standard deviation over every frame.
    pub fn fit(features: &[FeatureMatrix]) -> Result<Self, FeatureError> {
        let first = features.first().ok_or(FeatureError::NoFrames)?;
        let (coeffs, fingerprint) = (first.num_coeffs, first.fingerprint);
        if let Some(fm) = features.iter().find(|f| f.fingerprint != fingerprint) {
            return Err(FeatureError::FingerprintMismatch {
                features: fm.fingerprint,
                stats: fingerprint,
            });
        }
        let rows = || features.iter().flat_map(|fm| fm.values.chunks_exact(coeffs));
        let count = rows().count();
        if count == 0 {
            return Err(FeatureError::NoFrames);
        }
        let mut mean = vec![0.0; coeffs];
        for row in rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut var = vec![0.0; coeffs];
        for row in rows() {
            for c in 0..coeffs {
                let d = row[c] - mean[c];
                var[c] += d * d;
            }
        }
        Ok(Self {
            mean,
            std: var.iter().map(|v| (v / count as f64).sqrt()).collect(),
            fingerprint,
        })
    }

    /// `(value - mean) / max(std, STD_FLOOR)` on raw values.
    pub fn apply_raw(&self, values: &mut [f64]) {
        let coeffs = self.mean.len();
        for row in values.chunks_exact_mut(coeffs) {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.std[c].max(STD_FLOOR);
            }
        }
    }
}

pub fn normalize(features: &FeatureMatrix, stats: &NormStats) -> Result<FeatureMatrix, FeatureError> {
    if features.fingerprint != stats.fingerprint {
        return Err(FeatureError::FingerprintMismatch {
            features: features.fingerprint,
            stats: stats.fingerprint,
        });
    }
    if features.normalized {
        return Err(FeatureError::AlreadyNormalized);
    }
    let mut out = features.clone();
    stats.apply_raw(&mut out.values);
    out.normalized = true;
    Ok(out)
}
