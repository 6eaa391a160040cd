//! Browser bindings: augmentation preview, MFCC images and a streaming
//! detector trained on synthetic speech.

use kws_core::augment::{self, AugmentRanges, Family};
use kws_core::dataset::{self, BuildConfig};
use kws_core::features::MfccExtractor;
use kws_core::nn::{ModelSpec, TrainConfig};
use kws_core::pipeline::{self, Pipeline};
use kws_core::stream::{self, Detector, DetectorConfig, WindowClassifier};
use kws_core::synth::{self, CorpusSpec, Speaker};
use kws_core::{seed, AudioClip, MfccConfig, SubClass, TrainedModel, CANONICAL_SAMPLE_RATE, WINDOW_SECONDS};
use wasm_bindgen::prelude::*;

const RATE: u32 = CANONICAL_SAMPLE_RATE;

fn err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn to_f32(samples: &[f64]) -> Vec<f32> {
    samples.iter().map(|&s| s as f32).collect()
}

fn parse_family(name: &str) -> Option<Family> {
    Some(match name {
        "pitch" => Family::Pitch,
        "ambiance" => Family::Ambiance,
        "both" => Family::Both,
        "neither" => Family::Neither,
        _ => return None,
    })
}

fn ambiances(seed: u64) -> Vec<AudioClip> {
    synth::AmbianceKind::ALL
        .iter()
        .enumerate()
        .map(|(i, &k)| synth::ambiance(k, 4.0, RATE, &mut seed::rng(seed::derive_tagged(seed, "web-ambiance", i as u64))))
        .collect()
}

fn say(word: &str, seed: u64) -> Option<AudioClip> {
    let mut rng = seed::rng(seed);
    let speaker = Speaker::random(&mut rng);
    synth::speak(word, &speaker, RATE, &mut rng)
}

#[wasm_bindgen]
pub struct AugmentPreview {
    original: Vec<f32>,
    augmented: Vec<f32>,
    spec_json: String,
}

#[wasm_bindgen]
impl AugmentPreview {
    /// The clean utterance, one second at 16 kHz.
    #[wasm_bindgen(getter)]
    pub fn original(&self) -> Vec<f32> {
        self.original.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn augmented(&self) -> Vec<f32> {
        self.augmented.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn spec(&self) -> String {
        self.spec_json.clone()
    }
}

/// Synthesizes `word` with a random speaker and applies one augmentation of
/// the given family ("pitch", "ambiance", "both" or "neither").
#[wasm_bindgen]
pub fn augment_preview(word: &str, family: &str, seed: u64) -> Result<AugmentPreview, JsError> {
    let family = parse_family(family).ok_or_else(|| err(format!("unknown family {family:?}")))?;
    let clip = say(word, seed).ok_or_else(|| err(format!("no pronunciation for {word:?}")))?;
    let pool = ambiances(seed);
    let mut rng = seed::rng(seed::derive_tagged(seed, "web-augment", 0));
    let spec = augment::sample_augment_spec(&mut rng, &AugmentRanges::default(), family, pool.len()).map_err(err)?;
    let out = augment::augment_clip(&clip, &spec, WINDOW_SECONDS, &pool).map_err(err)?;
    let plain = augment::fit_and_shift(&clip, 0.0, WINDOW_SECONDS);
    Ok(AugmentPreview {
        original: to_f32(plain.samples()),
        augmented: to_f32(out.samples()),
        spec_json: serde_json::to_string_pretty(&spec).map_err(err)?,
    })
}

/// Words the synthesizer can say.
#[wasm_bindgen]
pub fn vocabulary() -> Vec<String> {
    std::iter::once(synth::KEYWORD).chain(synth::NEGATIVE_WORDS.iter().copied()).map(String::from).collect()
}

#[wasm_bindgen]
pub struct MfccImage {
    frames: usize,
    coeffs: usize,
    values: Vec<f32>,
}

#[wasm_bindgen]
impl MfccImage {
    #[wasm_bindgen(getter)]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[wasm_bindgen(getter)]
    pub fn coeffs(&self) -> usize {
        self.coeffs
    }

    /// Row-major, one row per frame.
    #[wasm_bindgen(getter)]
    pub fn values(&self) -> Vec<f32> {
        self.values.clone()
    }
}

/// MFCCs of a one-second window (padded or trimmed) of 16 kHz audio.
#[wasm_bindgen]
pub fn mfcc(samples: &[f32], frame_length_s: f64, frame_stride_s: f64, mel_filters: usize) -> Result<MfccImage, JsError> {
    let frame_len = (frame_length_s * RATE as f64).round() as usize;
    let config = MfccConfig {
        frame_length_s,
        frame_stride_s,
        num_mel_filters: mel_filters,
        fft_size: frame_len.max(1).next_power_of_two(),
        ..MfccConfig::default()
    };
    let clip = AudioClip::new(samples.iter().map(|&s| s as f64).collect(), RATE).map_err(err)?;
    let clip = augment::fit_and_shift(&clip, 0.0, WINDOW_SECONDS);
    let extractor = MfccExtractor::new(&config, RATE, clip.len()).map_err(err)?;
    let fm = extractor.compute_clip(&clip).map_err(err)?;
    Ok(MfccImage {
        frames: fm.num_frames,
        coeffs: fm.num_coeffs,
        values: to_f32(&fm.values),
    })
}

/// A trained classifier ready to stream.
#[wasm_bindgen]
pub struct Spotter {
    pipeline: Pipeline,
    summary: String,
}

fn labeled(corpus_seed: u64, per_subclass: usize) -> Result<Vec<(AudioClip, SubClass)>, String> {
    let spec = CorpusSpec {
        user_speakers: 3,
        user_clips: 9,
        external_speakers: 1,
        external_clips: 1,
        word_speakers: 12,
        clips_per_word: 1,
        ambiance_seconds: 4.0,
        ..CorpusSpec::default()
    };
    let corpus = synth::synthetic_corpus(&spec, corpus_seed);
    let records = dataset::generate(&corpus.inputs, &BuildConfig::with_count(per_subclass), corpus_seed).map_err(|e| e.to_string())?;
    Ok(records.into_iter().map(|(r, c)| (c, r.subclass)).collect())
}

impl Spotter {
    /// Trains the default architecture on freshly synthesized data. Validation
    /// data comes from a corpus with different speakers.
    pub fn train_native(seed: u64, per_subclass: usize, epochs: usize) -> Result<Self, String> {
        let train = labeled(seed, per_subclass)?;
        let val = labeled(seed::derive_tagged(seed, "web-val", 0), per_subclass.div_ceil(4))?;
        let mfcc = MfccConfig::default();
        let extractor = MfccExtractor::new(&mfcc, RATE, train[0].0.len()).map_err(|e| e.to_string())?;
        let spec = ModelSpec::default_for(extractor.num_frames(), extractor.num_coeffs(), 24, 5, 0.2);
        let config = TrainConfig {
            epochs,
            batch_size: 32,
            learning_rate: 0.003,
            patience: epochs,
            seed,
            ..TrainConfig::default()
        };
        let (model, fit) = pipeline::train_model(&train, &val, &mfcc, &spec, &config, DetectorConfig::default().threshold)
            .map_err(|e| e.to_string())?;
        let best = fit.best().cloned();
        let summary = match best {
            Some(b) => format!(
                "{} training windows, best epoch {} of {}: validation accuracy {:.3}, F1 {:.3}",
                train.len(),
                b.epoch + 1,
                fit.history.len(),
                b.val_accuracy,
                b.val_f1
            ),
            None => format!("{} training windows", train.len()),
        };
        Ok(Self {
            pipeline: Pipeline::new(model).map_err(|e| e.to_string())?,
            summary,
        })
    }

    pub fn from_model(model: TrainedModel) -> Result<Self, String> {
        let params = model.spec.param_count().map_err(|e| e.to_string())?;
        let summary = format!("loaded model with {params} parameters");
        Ok(Self {
            pipeline: Pipeline::new(model).map_err(|e| e.to_string())?,
            summary,
        })
    }

    pub fn stream_native(&self, seed: u64, keyword_at_s: f64, seconds: f64, threshold: f64, refractory_ms: u64) -> Result<StreamRun, String> {
        let total = (seconds * RATE as f64).round() as usize;
        let mut rng = seed::rng(seed::derive_tagged(seed, "web-stream", 0));
        let mut audio = dataset::synth_static(seconds, 0.01, RATE, &mut rng).map_err(|e| e.to_string())?.into_samples();
        audio.resize(total, 0.0);
        let word = say(synth::KEYWORD, seed::derive_tagged(seed, "web-speaker", 0)).ok_or("keyword synthesis failed")?;
        let start = (keyword_at_s * RATE as f64).round() as usize;
        for (i, s) in word.samples().iter().enumerate() {
            if let Some(a) = audio.get_mut(start + i) {
                *a += s;
            }
        }
        let clip = AudioClip::new(audio, RATE).map_err(|e| e.to_string())?;
        let config = DetectorConfig { threshold, refractory_ms };
        let mut detector = Detector::new(&self.pipeline, config).map_err(|e| e.to_string())?;
        let packets = stream::packetize(clip.samples(), detector.packet_len(), RATE);
        let window = self.pipeline.window_samples();
        let mut trace = Vec::new();
        let mut events = Vec::new();
        for p in &packets {
            let end = ((p.sequence + 1) as usize * p.samples.len()).min(clip.len());
            if end >= window {
                let probs = self.pipeline.classify(&clip.samples()[end - window..end]).map_err(|e| e.to_string())?;
                trace.push(stream::name_probability(&probs) as f32);
            }
            if let Some(e) = detector.push_packet(p).map_err(|e| e.to_string())? {
                events.push(e.window_end_ms as f64 / 1000.0);
            }
        }
        Ok(StreamRun {
            samples: to_f32(clip.samples()),
            trace,
            events,
            hop_s: detector.packet_ms() / 1000.0,
            max_latency_ms: detector.state().max_latency_ms(),
        })
    }
}

#[wasm_bindgen]
impl Spotter {
    /// Trains a small model; takes a few seconds in the browser.
    pub fn train(seed: u64, per_subclass: usize, epochs: usize) -> Result<Spotter, JsError> {
        Self::train_native(seed, per_subclass, epochs).map_err(err)
    }

    /// Loads a `model.json` written by the command-line trainer.
    pub fn from_json(json: &str) -> Result<Spotter, JsError> {
        let model: TrainedModel = serde_json::from_str(json).map_err(err)?;
        Self::from_model(model).map_err(err)
    }

    /// Loads an exported binary model.
    pub fn from_blob(bytes: &[u8]) -> Result<Spotter, JsError> {
        let model = kws_core::export::decode_model(bytes).map_err(err)?;
        Self::from_model(model).map_err(err)
    }

    #[wasm_bindgen(getter)]
    pub fn summary(&self) -> String {
        self.summary.clone()
    }

    /// Streams `seconds` of low static with the keyword spoken by an unseen
    /// speaker at `keyword_at_s`, in 250 ms packets.
    pub fn stream(&self, seed: u64, keyword_at_s: f64, seconds: f64, threshold: f64, refractory_ms: u64) -> Result<StreamRun, JsError> {
        self.stream_native(seed, keyword_at_s, seconds, threshold, refractory_ms).map_err(err)
    }
}

#[wasm_bindgen]
pub struct StreamRun {
    samples: Vec<f32>,
    trace: Vec<f32>,
    events: Vec<f64>,
    hop_s: f64,
    max_latency_ms: f64,
}

#[wasm_bindgen]
impl StreamRun {
    #[wasm_bindgen(getter)]
    pub fn samples(&self) -> Vec<f32> {
        self.samples.clone()
    }

    /// Keyword probability for each full window, one per packet hop.
    #[wasm_bindgen(getter)]
    pub fn trace(&self) -> Vec<f32> {
        self.trace.clone()
    }

    /// Window end times of detections, in seconds.
    #[wasm_bindgen(getter)]
    pub fn events(&self) -> Vec<f64> {
        self.events.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn hop_s(&self) -> f64 {
        self.hop_s
    }

    #[wasm_bindgen(getter)]
    pub fn max_latency_ms(&self) -> f64 {
        self.max_latency_ms
    }
}
