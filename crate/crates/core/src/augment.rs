//! Seeded audio transforms used to expand a few keyword recordings into a
//! corpus that sounds like many speakers in many rooms.
//!
//! Every transform is a pure function of its inputs. Randomness only enters
//! through [`sample_augment_spec`], which draws a fully specified
//! [`AugmentSpec`] from a seeded generator.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{self, AudioClip, AudioError};
use crate::seed;

/// Samples whose magnitude exceeds this count as content for time shifting.
pub const ACTIVE_THRESHOLD: f64 = 0.001;

/// Overlap-add analysis window.
const STRETCH_WINDOW_S: f64 = 0.030;
/// Maximum alignment search distance for the overlap-add splice.
const STRETCH_TOLERANCE_S: f64 = 0.010;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("pitch shift of {0} semitones is outside [-24, 24]")]
    PitchOutOfRange(f64),
    #[error("stretch factor {0} is outside [0.5, 2.0]")]
    StretchOutOfRange(f64),
    #[error("clip of {clip_s:.4} s does not fit a {window_s:.4} s window")]
    ClipLongerThanWindow { clip_s: f64, window_s: f64 },
    #[error("offset {offset_s:.4} s would push active content outside the window")]
    ContentOutsideWindow { offset_s: f64 },
    #[error("sample-rate mismatch: clip {clip} Hz, ambiance {ambiance} Hz")]
    RateMismatch { clip: u32, ambiance: u32 },
    #[error("undefined SNR: clip is silent")]
    SilentSignal,
    #[error("ambiance segment is silent")]
    SilentAmbiance,
    #[error("ambiance ({ambiance} samples) is shorter than clip ({clip} samples)")]
    AmbianceTooShort { clip: usize, ambiance: usize },
    #[error("ambiance {0} requested but no ambiance clips are available")]
    MissingAmbiance(u32),
    #[error("invalid augmentation range: {0}")]
    InvalidRange(&'static str),
    #[error("invalid augmentation spec: {0}")]
    InvalidSpec(&'static str),
    #[error("empty clip")]
    Empty,
    #[error(transparent)]
    Audio(#[from] AudioError),
}

/// Closed interval `[low, high]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub low: f64,
    pub high: f64,
}

impl Span {
    pub const fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    pub fn is_valid(&self) -> bool {
        self.low.is_finite() && self.high.is_finite() && self.low <= self.high
    }

    pub fn draw(&self, rng: &mut seed::Rng) -> f64 {
        if self.low == self.high {
            self.low
        } else {
            rng.random_range(self.low..=self.high)
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.low && v <= self.high
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnabledTransforms {
    pub pitch: bool,
    pub speed: bool,
    pub gain: bool,
    pub shift: bool,
    pub ambiance: bool,
}

impl Default for EnabledTransforms {
    fn default() -> Self {
        Self {
            pitch: true,
            speed: true,
            gain: true,
            shift: true,
            ambiance: true,
        }
    }
}

/// Ranges the augmentation parameters are drawn from (uniformly).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentRanges {
    pub pitch_semitones: Span,
    pub speed: Span,
    pub gain_db: Span,
    /// Length of the window clips are placed in.
    pub window_s: f64,
    /// Largest displacement drawn for the timing transform.
    pub max_shift_s: f64,
    pub snr_db: Span,
    pub enabled: EnabledTransforms,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        Self {
            pitch_semitones: Span::new(-4.0, 4.0),
            speed: Span::new(0.85, 1.15),
            gain_db: Span::new(-6.0, 6.0),
            window_s: 1.0,
            max_shift_s: 0.25,
            snr_db: Span::new(5.0, 20.0),
            enabled: EnabledTransforms::default(),
        }
    }
}

impl AugmentRanges {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let check = |ok: bool, what| if ok { Ok(()) } else { Err(AugmentError::InvalidRange(what)) };
        check(self.pitch_semitones.is_valid(), "pitch_semitones")?;
        check(
            self.pitch_semitones.low >= -24.0 && self.pitch_semitones.high <= 24.0,
            "pitch_semitones",
        )?;
        check(self.speed.is_valid(), "speed")?;
        check(self.speed.low >= 0.5 && self.speed.high <= 2.0, "speed")?;
        check(self.gain_db.is_valid(), "gain_db")?;
        check(self.window_s.is_finite() && self.window_s > 0.0, "window_s")?;
        check(self.max_shift_s.is_finite() && self.max_shift_s >= 0.0, "max_shift_s")?;
        check(self.snr_db.is_valid(), "snr_db")?;
        Ok(())
    }
}

/// How a keyword sample was transformed. Speed, gain and timing apply to
/// every family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Pitch,
    Ambiance,
    Both,
    Neither,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Pitch, Family::Ambiance, Family::Both, Family::Neither];

    pub fn uses_pitch(self) -> bool {
        matches!(self, Family::Pitch | Family::Both)
    }

    pub fn uses_ambiance(self) -> bool {
        matches!(self, Family::Ambiance | Family::Both)
    }
}

/// A fully determined augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub pitch_semitones: f64,
    pub speed_factor: f64,
    pub gain_db: f64,
    pub time_shift_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ambiance_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl AugmentSpec {
    /// The spec that leaves a window-length clip unchanged.
    pub fn identity() -> Self {
        Self {
            pitch_semitones: 0.0,
            speed_factor: 1.0,
            gain_db: 0.0,
            time_shift_s: 0.0,
            ambiance_id: None,
            snr_db: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.ambiance_id.is_some() != self.snr_db.is_some() {
            return Err(AugmentError::InvalidSpec("snr_db must be present exactly when ambiance_id is"));
        }
        if !(self.speed_factor > 0.0) {
            return Err(AugmentError::InvalidSpec("speed_factor must be positive"));
        }
        let finite = [self.pitch_semitones, self.speed_factor, self.gain_db, self.time_shift_s]
            .iter()
            .chain(self.snr_db.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(AugmentError::InvalidSpec("non-finite parameter"));
        }
        Ok(())
    }
}

/// Draws an augmentation for one sample of the given family.
///
/// `ambiance_pool` is the number of ambiance clips available; ambiance ids
/// index into it.
pub fn sample_augment_spec(
    rng: &mut seed::Rng,
    ranges: &AugmentRanges,
    family: Family,
    ambiance_pool: usize,
) -> Result<AugmentSpec, AugmentError> {
    ranges.validate()?;
    // Every draw happens regardless of family so that the generator advances
    // identically for all families.
    let speed = ranges.speed.draw(rng);
    let gain = ranges.gain_db.draw(rng);
    let shift = Span::new(-ranges.max_shift_s, ranges.max_shift_s).draw(rng);
    let pitch = ranges.pitch_semitones.draw(rng);
    let ambiance_draw = rng.random::<u32>();
    let snr = ranges.snr_db.draw(rng);
    let mix_seed = rng.random::<u64>();

    let en = &ranges.enabled;
    let with_ambiance = family.uses_ambiance() && en.ambiance;
    if with_ambiance && ambiance_pool == 0 {
        return Err(AugmentError::MissingAmbiance(0));
    }
    Ok(AugmentSpec {
        pitch_semitones: if family.uses_pitch() && en.pitch { pitch } else { 0.0 },
        speed_factor: if en.speed { speed } else { 1.0 },
        gain_db: if en.gain { gain } else { 0.0 },
        time_shift_s: if en.shift { shift } else { 0.0 },
        ambiance_id: with_ambiance.then(|| ambiance_draw % ambiance_pool as u32),
        snr_db: with_ambiance.then_some(snr),
        seed: mix_seed,
    })
}

fn periodic_hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Waveform-similarity overlap-add: stretches `samples` to `out_len` samples
/// without changing pitch. Each synthesis frame is taken near its ideal input
/// position, at the offset that best continues the previous frame.
fn overlap_add_stretch(samples: &[f64], rate: u32, out_len: usize) -> Vec<f64> {
    if samples.is_empty() || out_len == 0 {
        return vec![0.0; out_len];
    }
    let mut frame = ((STRETCH_WINDOW_S * rate as f64).round() as usize).max(4);
    frame += frame % 2;
    let hop = frame / 2;
    let tolerance = (STRETCH_TOLERANCE_S * rate as f64).round() as usize;
    let factor = samples.len() as f64 / out_len as f64;

    // Zero padding so every candidate segment is in bounds.
    let lead = tolerance;
    let mut padded = vec![0.0; lead];
    padded.extend_from_slice(samples);
    padded.resize(lead + samples.len() + tolerance + 2 * frame + hop, 0.0);
    let at = |pos: usize| &padded[pos..pos + frame];

    let window = periodic_hann(frame);
    let mut out = vec![0.0; out_len + frame];
    let mut norm = vec![0.0; out_len + frame];
    let mut prev: Option<usize> = None;
    let mut k = 0usize;
    while k * hop < out_len {
        let ideal = lead + ((k * hop) as f64 * factor).round() as usize;
        let ideal = ideal.min(padded.len() - frame - tolerance);
        let pos = match prev {
            None => ideal,
            Some(p) => {
                let target = at(p + hop);
                let target_energy: f64 = target.iter().map(|v| v * v).sum();
                if target_energy <= 1e-18 {
                    ideal
                } else {
                    let mut best = (f64::NEG_INFINITY, ideal);
                    let lo = ideal - tolerance;
                    for cand in lo..=ideal + tolerance {
                        let seg = at(cand);
                        let (mut dot, mut energy) = (0.0, 0.0);
                        for (a, b) in seg.iter().zip(target) {
                            dot += a * b;
                            energy += a * a;
                        }
                        let score = if energy > 1e-18 { dot / energy.sqrt() } else { 0.0 };
                        let closer = cand.abs_diff(ideal) < best.1.abs_diff(ideal);
                        if score > best.0 || (score == best.0 && closer) {
                            best = (score, cand);
                        }
                    }
                    best.1
                }
            }
        };
        let base = k * hop;
        for (i, (&x, &w)) in at(pos).iter().zip(&window).enumerate() {
            out[base + i] += w * x;
            norm[base + i] += w;
        }
        prev = Some(pos);
        k += 1;
    }
    out.truncate(out_len);
    for (o, n) in out.iter_mut().zip(&norm) {
        if *n > 1e-9 {
            *o /= n;
        }
    }
    out
}

/// Changes duration by `1 / factor` while keeping pitch.
pub fn time_stretch(clip: &AudioClip, factor: f64) -> Result<AudioClip, AugmentError> {
    if !(0.5..=2.0).contains(&factor) {
        return Err(AugmentError::StretchOutOfRange(factor));
    }
    if factor == 1.0 {
        return Ok(clip.clone());
    }
    let out_len = (clip.len() as f64 / factor).round() as usize;
    Ok(clip.with_samples(overlap_add_stretch(clip.samples(), clip.sample_rate(), out_len)))
}

/// Scales perceived pitch by `2^(semitones / 12)` at constant duration:
/// resample by the pitch ratio, then stretch back to the original length.
pub fn pitch_shift(clip: &AudioClip, semitones: f64) -> Result<AudioClip, AugmentError> {
    if !(-24.0..=24.0).contains(&semitones) {
        return Err(AugmentError::PitchOutOfRange(semitones));
    }
    if clip.is_empty() {
        return Err(AugmentError::Empty);
    }
    if semitones == 0.0 {
        return Ok(clip.clone());
    }
    let ratio = 2f64.powf(semitones / 12.0);
    let squeezed_len = ((clip.len() as f64 / ratio).round() as usize).max(1);
    let squeezed = audio::interpolate(clip.samples(), squeezed_len, ratio);
    Ok(clip.with_samples(overlap_add_stretch(&squeezed, clip.sample_rate(), clip.len())))
}

pub fn db_to_amplitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Multiplies by `10^(gain_db / 20)` and clamps to [-1, 1].
pub fn apply_gain(clip: &AudioClip, gain_db: f64) -> AudioClip {
    if gain_db == 0.0 {
        return clip.clone();
    }
    let g = db_to_amplitude(gain_db);
    clip.with_samples(clip.samples().iter().map(|s| (s * g).clamp(-1.0, 1.0)).collect())
}

/// First and last sample index whose magnitude exceeds [`ACTIVE_THRESHOLD`].
pub fn active_span(samples: &[f64]) -> Option<(usize, usize)> {
    let first = samples.iter().position(|s| s.abs() > ACTIVE_THRESHOLD)?;
    let last = samples.iter().rposition(|s| s.abs() > ACTIVE_THRESHOLD)?;
    Some((first, last))
}

fn window_len(window_s: f64, rate: u32) -> usize {
    (window_s * rate as f64).round() as usize
}

fn shift_into(samples: &[f64], offset: i64, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (i, &s) in samples.iter().enumerate() {
        let j = i as i64 + offset;
        if (0..len as i64).contains(&j) {
            out[j as usize] = s;
        }
    }
    out
}

/// Places the clip at the start of a `window_s` window and moves it by
/// `offset_s` (positive is later). Active content must stay inside.
pub fn time_shift(clip: &AudioClip, offset_s: f64, window_s: f64) -> Result<AudioClip, AugmentError> {
    let len = window_len(window_s, clip.sample_rate());
    if clip.len() > len {
        return Err(AugmentError::ClipLongerThanWindow {
            clip_s: clip.duration_seconds(),
            window_s,
        });
    }
    let offset = (offset_s * clip.sample_rate() as f64).round() as i64;
    if let Some((first, last)) = active_span(clip.samples()) {
        if first as i64 + offset < 0 || last as i64 + offset >= len as i64 {
            return Err(AugmentError::ContentOutsideWindow { offset_s });
        }
    }
    Ok(clip.with_samples(shift_into(clip.samples(), offset, len)))
}

/// Fits a clip of any length into a window (pad symmetrically, or crop around
/// the active content), then shifts by `offset_s` clamped to what keeps the
/// active content inside.
pub fn fit_and_shift(clip: &AudioClip, offset_s: f64, window_s: f64) -> AudioClip {
    let len = window_len(window_s, clip.sample_rate());
    let samples = clip.samples();
    let fitted: Vec<f64> = if samples.len() == len {
        samples.to_vec()
    } else if samples.len() < len {
        let lead = (len - samples.len()) / 2;
        shift_into(samples, lead as i64, len)
    } else {
        let (first, last) = active_span(samples).unwrap_or((0, samples.len() - 1));
        let center = (first + last) / 2;
        let start = center.saturating_sub(len / 2).min(samples.len() - len);
        samples[start..start + len].to_vec()
    };
    let offset = (offset_s * clip.sample_rate() as f64).round() as i64;
    let offset = match active_span(&fitted) {
        Some((first, last)) => {
            let min = -(first as i64);
            let max = len as i64 - 1 - last as i64;
            if min > max {
                0
            } else {
                offset.clamp(min, max)
            }
        }
        None => 0,
    };
    clip.with_samples(shift_into(&fitted, offset, len))
}

/// Result of mixing ambiance into a clip, with the mixing parameters used.
#[derive(Debug, Clone)]
pub struct Mix {
    pub clip: AudioClip,
    /// Start of the ambiance segment that was used.
    pub segment_start: usize,
    /// Gain applied to that segment.
    pub noise_gain: f64,
}

/// Adds a seeded ambiance segment scaled to the requested SNR.
pub fn mix_ambiance(
    clip: &AudioClip,
    ambiance: &AudioClip,
    snr_db: f64,
    seed: u64,
) -> Result<AudioClip, AugmentError> {
    mix_ambiance_detailed(clip, ambiance, snr_db, seed).map(|m| m.clip)
}

pub fn mix_ambiance_detailed(
    clip: &AudioClip,
    ambiance: &AudioClip,
    snr_db: f64,
    seed: u64,
) -> Result<Mix, AugmentError> {
    if clip.sample_rate() != ambiance.sample_rate() {
        return Err(AugmentError::RateMismatch {
            clip: clip.sample_rate(),
            ambiance: ambiance.sample_rate(),
        });
    }
    if ambiance.len() < clip.len() {
        return Err(AugmentError::AmbianceTooShort {
            clip: clip.len(),
            ambiance: ambiance.len(),
        });
    }
    let signal_rms = audio::rms_of(clip.samples()).ok_or(AugmentError::Empty)?;
    if signal_rms == 0.0 {
        return Err(AugmentError::SilentSignal);
    }
    let mut rng = seed::rng(seed);
    let segment_start = rng.random_range(0..=ambiance.len() - clip.len());
    let segment = &ambiance.samples()[segment_start..segment_start + clip.len()];
    let noise_rms = audio::rms_of(segment).unwrap_or(0.0);
    if noise_rms == 0.0 {
        return Err(AugmentError::SilentAmbiance);
    }
    let noise_gain = signal_rms / (noise_rms * db_to_amplitude(snr_db));
    let mixed = clip
        .samples()
        .iter()
        .zip(segment)
        .map(|(s, n)| (s + noise_gain * n).clamp(-1.0, 1.0))
        .collect();
    Ok(Mix {
        clip: clip.with_samples(mixed),
        segment_start,
        noise_gain,
    })
}

/// Applies a spec in fixed order: stretch, pitch, gain, fit-and-shift, mix.
/// The output is always exactly `window_s` long.
pub fn augment_clip(
    clip: &AudioClip,
    spec: &AugmentSpec,
    window_s: f64,
    ambiances: &[AudioClip],
) -> Result<AudioClip, AugmentError> {
    spec.validate()?;
    if clip.is_empty() {
        return Err(AugmentError::Empty);
    }
    let stretched = time_stretch(clip, spec.speed_factor)?;
    let pitched = pitch_shift(&stretched, spec.pitch_semitones)?;
    let gained = apply_gain(&pitched, spec.gain_db);
    let placed = fit_and_shift(&gained, spec.time_shift_s, window_s);
    match (spec.ambiance_id, spec.snr_db) {
        (Some(id), Some(snr)) => {
            if ambiances.is_empty() {
                return Err(AugmentError::MissingAmbiance(id));
            }
            let ambiance = &ambiances[id as usize % ambiances.len()];
            mix_ambiance(&placed, ambiance, snr, spec.seed)
        }
        _ => Ok(placed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const RATE: u32 = 16000;

    fn sine(freq: f64, secs: f64, amp: f64) -> AudioClip {
        let n = (secs * RATE as f64).round() as usize;
        AudioClip::new(
            (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / RATE as f64).sin()).collect(),
            RATE,
        )
        .unwrap()
    }

    fn burst(start_s: f64, len_s: f64, total_s: f64) -> AudioClip {
        let n = (total_s * RATE as f64).round() as usize;
        let a = (start_s * RATE as f64).round() as usize;
        let b = a + (len_s * RATE as f64).round() as usize;
        AudioClip::new(
            (0..n)
                .map(|i| if (a..b).contains(&i) { 0.5 * (2.0 * PI * 300.0 * i as f64 / RATE as f64).sin().signum() } else { 0.0 })
                .collect(),
            RATE,
        )
        .unwrap()
    }

    /// Peak frequency by direct DFT over integer-Hz bins of a 1 s excerpt.
    fn dft_peak_hz(samples: &[f64], lo: usize, hi: usize) -> usize {
        let n = samples.len().min(RATE as usize);
        let x = &samples[..n];
        (lo..hi)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, s) in x.iter().enumerate() {
                    let ang = -2.0 * PI * k as f64 * i as f64 / n as f64;
                    re += s * ang.cos();
                    im += s * ang.sin();
                }
                (k, re * re + im * im)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn pitch_zero_is_identity() {
        let s = sine(440.0, 1.0, 0.5);
        let out = pitch_shift(&s, 0.0).unwrap();
        assert_eq!(out.len(), s.len());
        assert_eq!(dft_peak_hz(out.samples(), 100, 2000), 440);
    }

    #[test]
    fn pitch_octave_up_and_down() {
        let s = sine(440.0, 1.0, 0.5);
        let up = pitch_shift(&s, 12.0).unwrap();
        assert_eq!(up.len(), s.len());
        let peak = dft_peak_hz(up.samples(), 100, 2000);
        assert!(peak.abs_diff(880) <= 1, "peak {peak}");
        let down = pitch_shift(&s, -12.0).unwrap();
        let peak = dft_peak_hz(down.samples(), 100, 2000);
        assert!(peak.abs_diff(220) <= 1, "peak {peak}");
    }

    #[test]
    fn pitch_law_for_several_shifts() {
        let s = sine(440.0, 1.0, 0.5);
        for st in [-4.0, 4.0] {
            let out = pitch_shift(&s, st).unwrap();
            let expected = 440.0 * 2f64.powf(st / 12.0);
            let peak = dft_peak_hz(out.samples(), 100, 2000) as f64;
            assert!((peak - expected).abs() <= 1.5, "{st}: {peak} vs {expected}");
        }
    }

    #[test]
    fn pitch_out_of_range_rejected() {
        let s = sine(440.0, 0.1, 0.5);
        assert!(matches!(pitch_shift(&s, 25.0), Err(AugmentError::PitchOutOfRange(_))));
    }

    #[test]
    fn stretch_identity_and_durations() {
        let s = sine(440.0, 1.0, 0.5);
        let same = time_stretch(&s, 1.0).unwrap();
        assert!(correlation(same.samples(), s.samples()) >= 0.99);

        let slow = time_stretch(&s, 0.5).unwrap();
        assert!((slow.duration_seconds() - 2.0).abs() <= 0.015);

        let fast = time_stretch(&s, 1.15).unwrap();
        assert!((fast.duration_seconds() - 1.0 / 1.15).abs() <= 0.015);
        // Integer-Hz probe over the whole 0.8696 s output.
        let peak = (400u32..480)
            .map(|f| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, x) in fast.samples().iter().enumerate() {
                    let ang = -2.0 * PI * f as f64 * i as f64 / RATE as f64;
                    re += x * ang.cos();
                    im += x * ang.sin();
                }
                (f, re * re + im * im)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        assert!(peak.abs_diff(440) <= 1, "peak {peak}");
        assert!(matches!(time_stretch(&s, 2.5), Err(AugmentError::StretchOutOfRange(_))));
    }

    #[test]
    fn gain_rules() {
        let s = sine(100.0, 1.0, 0.1 * 2f64.sqrt());
        assert_eq!(apply_gain(&s, 0.0), s);
        let r0 = audio::rms(&s).unwrap();
        assert!((r0 - 0.1).abs() < 1e-9);
        let up = apply_gain(&s, 6.0206);
        assert!((audio::rms(&up).unwrap() - 0.2).abs() < 1e-6);
        let loud = apply_gain(&sine(100.0, 1.0, 1.0), 40.0);
        let peak = loud.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert_eq!(peak, 1.0);
    }

    #[test]
    fn time_shift_moves_content_and_conserves_energy() {
        let centered = burst(0.25, 0.5, 1.0);
        let same = time_shift(&centered, 0.0, 1.0).unwrap();
        assert_eq!(active_span(same.samples()), active_span(centered.samples()));

        let b = burst(0.1, 0.3, 1.0);
        let moved = time_shift(&b, 0.2, 1.0).unwrap();
        assert_eq!(moved.len(), 16000);
        assert_eq!(active_span(moved.samples()).unwrap().0, 4800);
        let sum = |c: &AudioClip| c.samples().iter().map(|v| v.abs()).sum::<f64>();
        assert!((sum(&moved) - sum(&b)).abs() < 1e-9);

        assert!(matches!(
            time_shift(&b, 0.9, 1.0),
            Err(AugmentError::ContentOutsideWindow { .. })
        ));
        assert!(matches!(
            time_shift(&burst(0.1, 0.3, 1.5), 0.0, 1.0),
            Err(AugmentError::ClipLongerThanWindow { .. })
        ));
    }

    #[test]
    fn fit_and_shift_clamps_to_window() {
        let short = burst(0.0, 0.4, 0.6);
        let out = fit_and_shift(&short, 10.0, 1.0);
        assert_eq!(out.len(), 16000);
        let (_, last) = active_span(out.samples()).unwrap();
        assert_eq!(last, 15999);
        let long = burst(0.9, 0.3, 2.0);
        let out = fit_and_shift(&long, 0.0, 1.0);
        assert_eq!(out.len(), 16000);
        let sum = |s: &[f64]| s.iter().map(|v| v.abs()).sum::<f64>();
        assert!((sum(out.samples()) - sum(long.samples())).abs() < 1e-9);
    }

    fn noise(len: usize, seed: u64) -> AudioClip {
        let mut rng = seed::rng(seed);
        AudioClip::new((0..len).map(|_| rng.random_range(-0.5..0.5)).collect(), RATE).unwrap()
    }

    #[test]
    fn mixing_hits_requested_snr() {
        let clip = sine(440.0, 1.0, 0.2 * 2f64.sqrt());
        let amb = noise(40000, 3);
        let mix = mix_ambiance_detailed(&clip, &amb, 10.0, 9).unwrap();
        let seg = &amb.samples()[mix.segment_start..mix.segment_start + clip.len()];
        let scaled_rms = audio::rms_of(seg).unwrap() * mix.noise_gain;
        assert!((scaled_rms - 0.2 / 10f64.powf(0.5)).abs() < 1e-6);

        let quiet = mix_ambiance(&clip, &amb, 60.0, 9).unwrap();
        let dev = quiet
            .samples()
            .iter()
            .zip(clip.samples())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(dev < 0.002, "deviation {dev}");
    }

    #[test]
    fn mixing_errors() {
        let clip = sine(440.0, 1.0, 0.3);
        assert!(matches!(
            mix_ambiance(&AudioClip::silence(16000, RATE), &noise(20000, 1), 10.0, 0),
            Err(AugmentError::SilentSignal)
        ));
        assert!(matches!(
            mix_ambiance(&clip, &noise(100, 1), 10.0, 0),
            Err(AugmentError::AmbianceTooShort { .. })
        ));
        let other_rate = AudioClip::new(vec![0.1; 20000], 8000).unwrap();
        assert!(matches!(
            mix_ambiance(&clip, &other_rate, 10.0, 0),
            Err(AugmentError::RateMismatch { .. })
        ));
    }

    #[test]
    fn spec_sampling_by_family() {
        let ranges = AugmentRanges::default();
        let mut rng = seed::rng(5);
        let neither = sample_augment_spec(&mut rng, &ranges, Family::Neither, 3).unwrap();
        assert_eq!(neither.pitch_semitones, 0.0);
        assert!(neither.ambiance_id.is_none() && neither.snr_db.is_none());
        assert!(ranges.speed.contains(neither.speed_factor) && neither.speed_factor != 1.0);
        assert!(neither.gain_db != 0.0 && neither.time_shift_s != 0.0);

        let both = sample_augment_spec(&mut rng, &ranges, Family::Both, 3).unwrap();
        assert!(both.pitch_semitones != 0.0 && ranges.pitch_semitones.contains(both.pitch_semitones));
        assert!(both.ambiance_id.unwrap() < 3);
        assert!(ranges.snr_db.contains(both.snr_db.unwrap()));

        let a = sample_augment_spec(&mut seed::rng(11), &ranges, Family::Pitch, 3).unwrap();
        let b = sample_augment_spec(&mut seed::rng(11), &ranges, Family::Pitch, 3).unwrap();
        assert_eq!(a, b);

        assert!(matches!(
            sample_augment_spec(&mut rng, &ranges, Family::Ambiance, 0),
            Err(AugmentError::MissingAmbiance(_))
        ));
    }

    #[test]
    fn augment_identity_gain_and_determinism() {
        let clip = sine(440.0, 1.0, 0.3);
        let same = augment_clip(&clip, &AugmentSpec::identity(), 1.0, &[]).unwrap();
        assert!(correlation(same.samples(), clip.samples()) >= 0.99);

        let half = AugmentSpec {
            gain_db: -6.0206,
            ..AugmentSpec::identity()
        };
        let out = augment_clip(&clip, &half, 1.0, &[]).unwrap();
        let ratio = audio::rms(&clip).unwrap() / 2.0;
        assert!((audio::rms(&out).unwrap() - ratio).abs() < 1e-6);

        let ranges = AugmentRanges::default();
        let amb = [noise(32000, 4)];
        let spec = sample_augment_spec(&mut seed::rng(1), &ranges, Family::Both, 1).unwrap();
        let a = augment_clip(&sine(300.0, 0.7, 0.4), &spec, 1.0, &amb).unwrap();
        let b = augment_clip(&sine(300.0, 0.7, 0.4), &spec, 1.0, &amb).unwrap();
        assert_eq!(a.samples(), b.samples());
        assert_eq!(a.len(), 16000);
    }

    #[test]
    fn spec_validation() {
        let bad = AugmentSpec {
            ambiance_id: Some(0),
            ..AugmentSpec::identity()
        };
        assert!(matches!(bad.validate(), Err(AugmentError::InvalidSpec(_))));
        let mut ranges = AugmentRanges::default();
        ranges.speed = Span::new(1.2, 1.1);
        assert!(matches!(ranges.validate(), Err(AugmentError::InvalidRange("speed"))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn output_always_window_length(
                seed in any::<u64>(),
                family_ix in 0usize..4,
                len_s in 0.3f64..1.4,
            ) {
                let ranges = AugmentRanges::default();
                let family = Family::ALL[family_ix];
                let spec = sample_augment_spec(&mut seed::rng(seed), &ranges, family, 1).unwrap();
                let clip = sine(250.0, len_s, 0.3);
                let amb = [noise(20000, seed)];
                let out = augment_clip(&clip, &spec, 1.0, &amb).unwrap();
                prop_assert_eq!(out.len(), 16000);
                prop_assert!(out.samples().iter().all(|s| s.abs() <= 1.0));
            }

            #[test]
            fn gain_scales_rms(g in -6.0f64..6.0, amp in 0.05f64..0.49) {
                let clip = sine(200.0, 0.5, amp);
                let out = apply_gain(&clip, g);
                let expect = audio::rms(&clip).unwrap() * db_to_amplitude(g);
                prop_assert!((audio::rms(&out).unwrap() - expect).abs() <= 1e-9 * expect.max(1.0));
            }

            #[test]
            fn snr_law(snr in 0.0f64..30.0, seed in any::<u64>()) {
                let clip = sine(440.0, 1.0, 0.2);
                let amb = noise(24000, seed);
                let mix = mix_ambiance_detailed(&clip, &amb, snr, seed).unwrap();
                let seg = &amb.samples()[mix.segment_start..mix.segment_start + clip.len()];
                let noise_rms = audio::rms_of(seg).unwrap() * mix.noise_gain;
                let measured = 20.0 * (audio::rms(&clip).unwrap() / noise_rms).log10();
                prop_assert!((measured - snr).abs() < 0.1);
            }
        }
    }
}
