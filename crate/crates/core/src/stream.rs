//! Sliding-window detection over fixed-size packets.
//!
//! Four consecutive packets form one window; every new packet advances the
//! window by one packet. A window fires when the summed keyword probability
//! reaches the threshold, outside the refractory period of the previous event.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use web_time::Instant;

use crate::audio::{self, AudioClip, AudioError};
use crate::dataset::{ParentClass, SubClass};
use crate::nn::NUM_CLASSES;
use crate::pipeline::{Pipeline, PipelineError};

/// Packets per window.
pub const PACKETS_PER_WINDOW: usize = 4;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("packet has {actual} samples, expected {expected}")]
    PacketLength { expected: usize, actual: usize },
    #[error("sequence number {got} does not follow {last}")]
    NonMonotonic { last: u64, got: u64 },
    #[error("probabilities must be 8 values summing to 1, got {0:?}")]
    BadProbabilities(Vec<f64>),
    #[error("invalid detector config: {0}")]
    InvalidConfig(&'static str),
    #[error("window is {window} samples at {rate} Hz; it must split into {PACKETS_PER_WINDOW} equal packets")]
    IndivisibleWindow { window: usize, rate: u32 },
    #[error(transparent)]
    Classifier(#[from] PipelineError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("sink: {0}")]
    Sink(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub threshold: f64,
    pub refractory_ms: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            threshold: 0.70,
            refractory_ms: 1000,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), StreamError> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(StreamError::InvalidConfig("threshold must be in (0, 1)"));
        }
        Ok(())
    }
}

/// Anything that maps one window of samples to subclass probabilities.
pub trait WindowClassifier {
    fn sample_rate(&self) -> u32;
    fn window_samples(&self) -> usize;
    fn classify(&self, window: &[f64]) -> Result<Vec<f64>, PipelineError>;
}

impl<C: WindowClassifier + ?Sized> WindowClassifier for &C {
    fn sample_rate(&self) -> u32 {
        (**self).sample_rate()
    }

    fn window_samples(&self) -> usize {
        (**self).window_samples()
    }

    fn classify(&self, window: &[f64]) -> Result<Vec<f64>, PipelineError> {
        (**self).classify(window)
    }
}

impl WindowClassifier for Pipeline {
    fn sample_rate(&self) -> u32 {
        self.model().sample_rate
    }

    fn window_samples(&self) -> usize {
        self.model().window_samples
    }

    fn classify(&self, window: &[f64]) -> Result<Vec<f64>, PipelineError> {
        Pipeline::classify(self, window)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub samples: Vec<f64>,
    pub sequence: u64,
    /// Capture time of the first sample.
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    /// Audio time at the end of the triggering window.
    pub window_end_ms: u64,
    pub name_probability: f64,
    pub probabilities: [f64; NUM_CLASSES],
    /// Wall time spent on MFCC and forward pass for the window.
    pub latency_ms: f64,
}

/// Sum of the four keyword subclass probabilities.
pub fn name_probability(probs: &[f64]) -> f64 {
    SubClass::ALL
        .iter()
        .zip(probs)
        .filter(|(s, _)| s.parent() == ParentClass::Name)
        .map(|(_, p)| p)
        .sum()
}

/// Ring buffer and trigger bookkeeping. Memory is fixed at construction:
/// packets overwrite the oldest slot and nothing else retains samples.
#[derive(Debug, Clone)]
pub struct DetectorState {
    packet_len: usize,
    ring: Vec<f64>,
    /// Slot the next packet goes into.
    head: usize,
    filled: usize,
    window: Vec<f64>,
    last_sequence: Option<u64>,
    last_trigger_ms: Option<u64>,
    windows_processed: u64,
    latency_total_ms: f64,
    latency_max_ms: f64,
}

impl DetectorState {
    pub fn new(packet_len: usize) -> Self {
        Self {
            packet_len,
            ring: vec![0.0; packet_len * PACKETS_PER_WINDOW],
            head: 0,
            filled: 0,
            window: vec![0.0; packet_len * PACKETS_PER_WINDOW],
            last_sequence: None,
            last_trigger_ms: None,
            windows_processed: 0,
            latency_total_ms: 0.0,
            latency_max_ms: 0.0,
        }
    }

    pub fn packet_len(&self) -> usize {
        self.packet_len
    }

    /// Packets currently buffered (at most four).
    pub fn buffered(&self) -> usize {
        self.filled
    }

    pub fn windows_processed(&self) -> u64 {
        self.windows_processed
    }

    pub fn last_trigger_ms(&self) -> Option<u64> {
        self.last_trigger_ms
    }

    /// Number of audio samples the state can hold; constant for its lifetime.
    pub fn retained_capacity(&self) -> usize {
        self.ring.capacity() + self.window.capacity()
    }

    pub fn mean_latency_ms(&self) -> f64 {
        if self.windows_processed == 0 {
            0.0
        } else {
            self.latency_total_ms / self.windows_processed as f64
        }
    }

    pub fn max_latency_ms(&self) -> f64 {
        self.latency_max_ms
    }

    fn clear(&mut self) {
        self.ring.fill(0.0);
        self.head = 0;
        self.filled = 0;
    }

    /// Applies the threshold and refractory rules at audio time `now_ms`,
    /// recording the trigger when it fires.
    pub fn decide(&mut self, probs: &[f64], config: &DetectorConfig, now_ms: u64) -> Result<bool, StreamError> {
        let sum: f64 = probs.iter().sum();
        if probs.len() != NUM_CLASSES || (sum - 1.0).abs() > 1e-6 {
            return Err(StreamError::BadProbabilities(probs.to_vec()));
        }
        if name_probability(probs) < config.threshold {
            return Ok(false);
        }
        if let Some(last) = self.last_trigger_ms {
            if now_ms.saturating_sub(last) < config.refractory_ms {
                return Ok(false);
            }
        }
        self.last_trigger_ms = Some(now_ms);
        Ok(true)
    }
}

/// A classifier, its config and its streaming state.
pub struct Detector<C> {
    classifier: C,
    config: DetectorConfig,
    state: DetectorState,
}

impl<C: WindowClassifier> Detector<C> {
    pub fn new(classifier: C, config: DetectorConfig) -> Result<Self, StreamError> {
        config.validate()?;
        let window = classifier.window_samples();
        if window == 0 || window % PACKETS_PER_WINDOW != 0 {
            return Err(StreamError::IndivisibleWindow {
                window,
                rate: classifier.sample_rate(),
            });
        }
        Ok(Self {
            state: DetectorState::new(window / PACKETS_PER_WINDOW),
            classifier,
            config,
        })
    }

    pub fn state(&self) -> &DetectorState {
        &self.state
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn classifier(&self) -> &C {
        &self.classifier
    }

    pub fn packet_len(&self) -> usize {
        self.state.packet_len
    }

    pub fn packet_ms(&self) -> f64 {
        self.state.packet_len as f64 * 1000.0 / self.classifier.sample_rate() as f64
    }

    /// Buffers one packet and, once four contiguous packets are present,
    /// classifies the window ending with it.
    pub fn push_packet(&mut self, packet: &Packet) -> Result<Option<DetectionEvent>, StreamError> {
        let st = &mut self.state;
        if packet.samples.len() != st.packet_len {
            return Err(StreamError::PacketLength {
                expected: st.packet_len,
                actual: packet.samples.len(),
            });
        }
        if let Some(last) = st.last_sequence {
            if packet.sequence <= last {
                return Err(StreamError::NonMonotonic {
                    last,
                    got: packet.sequence,
                });
            }
            if packet.sequence != last + 1 {
                st.clear();
            }
        }
        st.last_sequence = Some(packet.sequence);
        let n = st.packet_len;
        st.ring[st.head * n..(st.head + 1) * n].copy_from_slice(&packet.samples);
        st.head = (st.head + 1) % PACKETS_PER_WINDOW;
        st.filled = (st.filled + 1).min(PACKETS_PER_WINDOW);
        if st.filled < PACKETS_PER_WINDOW {
            return Ok(None);
        }

        for k in 0..PACKETS_PER_WINDOW {
            let slot = (st.head + k) % PACKETS_PER_WINDOW;
            st.window[k * n..(k + 1) * n].copy_from_slice(&st.ring[slot * n..(slot + 1) * n]);
        }
        let started = Instant::now();
        let result = self.classifier.classify(&st.window);
        let latency_ms = started.elapsed().as_secs_f64() * 1000.0;
        st.window.fill(0.0);
        let probs = result?;
        st.windows_processed += 1;
        st.latency_total_ms += latency_ms;
        st.latency_max_ms = st.latency_max_ms.max(latency_ms);

        let packet_ms = n as f64 * 1000.0 / self.classifier.sample_rate() as f64;
        let window_end_ms = packet.timestamp_ms + packet_ms.round() as u64;
        if !st.decide(&probs, &self.config, window_end_ms)? {
            return Ok(None);
        }
        let mut probabilities = [0.0; NUM_CLASSES];
        probabilities.copy_from_slice(&probs);
        Ok(Some(DetectionEvent {
            window_end_ms,
            name_probability: name_probability(&probs),
            probabilities,
            latency_ms,
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayMode {
    /// One packet per packet duration of wall-clock time.
    Realtime,
    /// As fast as possible.
    Fast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub events: Vec<DetectionEvent>,
    pub packets: u64,
    pub windows: u64,
    pub mean_latency_ms: f64,
    pub max_latency_ms: f64,
}

/// Splits audio into packets (zero-padding the last one) timed from 0 ms.
pub fn packetize(samples: &[f64], packet_len: usize, sample_rate: u32) -> Vec<Packet> {
    samples
        .chunks(packet_len)
        .enumerate()
        .map(|(i, chunk)| {
            let mut s = chunk.to_vec();
            s.resize(packet_len, 0.0);
            Packet {
                samples: s,
                sequence: i as u64,
                timestamp_ms: ((i * packet_len) as f64 * 1000.0 / sample_rate as f64).round() as u64,
            }
        })
        .collect()
}

/// Streams a clip through the detector. Events go to `sink` as they occur.
pub fn replay<C: WindowClassifier>(
    clip: &AudioClip,
    detector: &mut Detector<C>,
    mode: ReplayMode,
    sink: &mut dyn AlertSink,
) -> Result<ReplayReport, StreamError> {
    let clip = audio::resample(clip, detector.classifier.sample_rate())?;
    let packets = packetize(clip.samples(), detector.packet_len(), clip.sample_rate());
    let period = std::time::Duration::from_secs_f64(detector.packet_ms() / 1000.0);
    let start = Instant::now();
    let windows_before = detector.state.windows_processed;
    let mut events = Vec::new();
    for (i, packet) in packets.iter().enumerate() {
        if mode == ReplayMode::Realtime {
            let due = period * i as u32;
            let elapsed = start.elapsed();
            if due > elapsed {
                pause(due - elapsed);
            }
        }
        if let Some(event) = detector.push_packet(packet)? {
            sink.on_event(&event)?;
            events.push(event);
        }
    }
    sink.finish(events.len())?;
    Ok(ReplayReport {
        events,
        packets: packets.len() as u64,
        windows: detector.state.windows_processed - windows_before,
        mean_latency_ms: detector.state.mean_latency_ms(),
        max_latency_ms: detector.state.max_latency_ms(),
    })
}

#[cfg(not(target_arch = "wasm32"))]
fn pause(d: std::time::Duration) {
    std::thread::sleep(d);
}

#[cfg(target_arch = "wasm32")]
fn pause(_: std::time::Duration) {}

/// Where detection events go.
pub trait AlertSink {
    fn on_event(&mut self, event: &DetectionEvent) -> std::io::Result<()>;
    /// Called once at the end of a run.
    fn finish(&mut self, detections: usize) -> std::io::Result<()>;
}

/// Discards events.
pub struct NullSink;

impl AlertSink for NullSink {
    fn on_event(&mut self, _: &DetectionEvent) -> std::io::Result<()> {
        Ok(())
    }

    fn finish(&mut self, _: usize) -> std::io::Result<()> {
        Ok(())
    }
}

/// One line per event: ISO-8601 time, summed keyword probability and latency.
/// Event times are `base_epoch_ms` plus the window-end audio time.
pub struct LogSink<W> {
    out: W,
    base_epoch_ms: i64,
}

impl<W: Write> LogSink<W> {
    pub fn new(out: W, base_epoch_ms: i64) -> Self {
        Self { out, base_epoch_ms }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Formats one log record.
pub fn format_event(event: &DetectionEvent, base_epoch_ms: i64) -> String {
    let ms = base_epoch_ms + event.window_end_ms as i64;
    let time = chrono::DateTime::from_timestamp_millis(ms)
        .map(|t| t.format("%Y-%m-%dT%H:%M:%S%.3fZ").to_string())
        .unwrap_or_else(|| ms.to_string());
    format!(
        "{time} name_probability={:.4} latency_ms={:.3}",
        event.name_probability, event.latency_ms
    )
}

pub fn summary_line(detections: usize) -> String {
    if detections == 1 {
        "1 detection".to_string()
    } else {
        format!("{detections} detections")
    }
}

impl<W: Write> AlertSink for LogSink<W> {
    fn on_event(&mut self, event: &DetectionEvent) -> std::io::Result<()> {
        writeln!(self.out, "{}", format_event(event, self.base_epoch_ms))
    }

    fn finish(&mut self, detections: usize) -> std::io::Result<()> {
        writeln!(self.out, "{}", summary_line(detections))?;
        self.out.flush()
    }
}
