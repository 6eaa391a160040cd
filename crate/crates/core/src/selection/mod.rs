//! Model evaluation and the constrained random search.

pub mod metrics;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;
use crate::augment::Span;
use crate::dataset::SubClass;
use crate::features::{FeatureError, MfccConfig, MfccExtractor};
use crate::nn::{Activation, EpochStats, LayerSpec, Layout, ModelSpec, TrainConfig, NUM_CLASSES};
use crate::pipeline::{self, Prepared, PipelineError, TrainedModel};
use crate::seed;

pub use metrics::{
    argmax, collapse_to_parent, confusion_from_predictions, f1_name, ConfusionMatrix2, ConfusionMatrix8,
};

/// Rejections allowed before a search space is declared unsatisfiable.
pub const MAX_REJECTIONS: usize = 1000;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("no predictions")]
    EmptyInput,
    #[error("{predictions} predictions but {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("prediction has {0} values, expected 8")]
    BadPrediction(usize),
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("no trial satisfied the constraints after {rejections} draws (last rejection: {reason})")]
    Unsatisfiable { rejections: usize, reason: String },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvDim {
    #[serde(rename = "1d")]
    One,
    #[serde(rename = "2d")]
    Two,
}

/// Axes and resource constraints of the random search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSpace {
    pub frame_length_s: Vec<f64>,
    pub frame_stride_s: Vec<f64>,
    pub num_mel_filters: Vec<usize>,
    pub num_cepstral_coeffs: usize,
    pub conv_dims: Vec<ConvDim>,
    /// Number of conv → pool → dropout blocks.
    pub conv_layers: Vec<usize>,
    /// Filter count choices, drawn independently per block.
    pub filters: Vec<usize>,
    pub kernel: Vec<usize>,
    pub dropout: Span,
    /// Width of an optional hidden dense layer; 0 means none.
    pub dense_units: Vec<usize>,
    pub max_params: usize,
    /// Multiply-accumulates per window (MFCC excluded).
    pub max_macs: usize,
    pub trials: usize,
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            frame_length_s: vec![0.02, 0.025, 0.032, 0.04, 0.05],
            frame_stride_s: vec![0.016, 0.02, 0.025, 0.032],
            num_mel_filters: vec![20, 32, 40],
            num_cepstral_coeffs: 13,
            conv_dims: vec![ConvDim::One],
            conv_layers: vec![1, 2],
            filters: vec![8, 16, 32],
            kernel: vec![3, 5],
            dropout: Span::new(0.1, 0.5),
            dense_units: vec![0],
            max_params: 20_000,
            max_macs: 500_000,
            trials: 72,
            seed: 0,
            train: TrainConfig::default(),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), SelectionError> {
        let bad = |m: &str| Err(SelectionError::InvalidSpace(m.into()));
        let axes = [
            ("frame_length_s", self.frame_length_s.is_empty()),
            ("frame_stride_s", self.frame_stride_s.is_empty()),
            ("num_mel_filters", self.num_mel_filters.is_empty()),
            ("conv_dims", self.conv_dims.is_empty()),
            ("conv_layers", self.conv_layers.is_empty()),
            ("filters", self.filters.is_empty()),
            ("kernel", self.kernel.is_empty()),
            ("dense_units", self.dense_units.is_empty()),
        ];
        if let Some((name, _)) = axes.iter().find(|(_, empty)| *empty) {
            return Err(SelectionError::InvalidSpace(format!("axis {name} is empty")));
        }
        if !self.dropout.is_valid() || self.dropout.low < 0.0 || self.dropout.high >= 1.0 {
            return bad("dropout must lie in [0, 1)");
        }
        if self.num_cepstral_coeffs == 0 {
            return bad("num_cepstral_coeffs must be positive");
        }
        if self.trials == 0 {
            return bad("trials must be positive");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, SelectionError> {
        let space: Self = serde_json::from_str(text)?;
        space.validate()?;
        Ok(space)
    }
}

/// One sampled point of the search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub mfcc: MfccConfig,
    pub spec: ModelSpec,
    pub dropout: f64,
}

fn pick<T: Copy>(rng: &mut seed::Rng, axis: &[T]) -> T {
    *axis.choose(rng).expect("axes are validated non-empty")
}

fn architecture(
    frames: usize,
    coeffs: usize,
    dim: ConvDim,
    filters: &[usize],
    kernel: usize,
    dropout: f64,
    dense: usize,
) -> ModelSpec {
    let layout = match dim {
        ConvDim::One => Layout::Sequence,
        ConvDim::Two => Layout::Image,
    };
    let mut layers = vec![LayerSpec::Reshape { layout }];
    for &f in filters {
        match dim {
            ConvDim::One => {
                layers.push(LayerSpec::conv1d(f, kernel));
                layers.push(LayerSpec::MaxPool1d { size: 2 });
            }
            ConvDim::Two => {
                layers.push(LayerSpec::Conv2d {
                    filters: f,
                    kernel,
                    activation: Activation::Relu,
                });
                layers.push(LayerSpec::MaxPool2d { size: 2 });
            }
        }
        layers.push(LayerSpec::Dropout { rate: dropout });
    }
    layers.push(LayerSpec::Flatten);
    if dense > 0 {
        layers.push(LayerSpec::Dense {
            units: dense,
            activation: Activation::Relu,
        });
    }
    layers.push(LayerSpec::Dense {
        units: NUM_CLASSES,
        activation: Activation::Softmax,
    });
    ModelSpec {
        input_frames: frames,
        input_coeffs: coeffs,
        layers,
    }
}

fn draw_once(
    space: &SearchSpace,
    sample_rate: u32,
    window_samples: usize,
    rng: &mut seed::Rng,
) -> Result<TrialSpec, String> {
    let frame = pick(rng, &space.frame_length_s);
    let stride = pick(rng, &space.frame_stride_s);
    let filters_mel = pick(rng, &space.num_mel_filters);
    let dim = pick(rng, &space.conv_dims);
    let blocks = pick(rng, &space.conv_layers);
    let filters: Vec<usize> = (0..blocks).map(|_| pick(rng, &space.filters)).collect();
    let kernel = pick(rng, &space.kernel);
    let dropout = space.dropout.draw(rng);
    let dense = pick(rng, &space.dense_units);

    if stride > frame {
        return Err(format!("stride {stride} exceeds frame length {frame}"));
    }
    let frame_samples = (frame * sample_rate as f64).round() as usize;
    let mfcc = MfccConfig {
        frame_length_s: frame,
        frame_stride_s: stride,
        num_mel_filters: filters_mel,
        num_cepstral_coeffs: space.num_cepstral_coeffs,
        fft_size: frame_samples.next_power_of_two(),
        ..MfccConfig::default()
    };
    mfcc.validate(sample_rate).map_err(|e| e.to_string())?;
    let frames = mfcc.num_frames(sample_rate, window_samples);
    if frames == 0 {
        return Err("window shorter than one frame".into());
    }
    let spec = architecture(frames, mfcc.num_cepstral_coeffs, dim, &filters, kernel, dropout, dense);
    let params = spec.param_count().map_err(|e| e.to_string())?;
    let macs = spec.macs().map_err(|e| e.to_string())?;
    if params > space.max_params {
        return Err(format!("{params} parameters exceed {}", space.max_params));
    }
    if macs > space.max_macs {
        return Err(format!("{macs} MACs exceed {}", space.max_macs));
    }
    Ok(TrialSpec { mfcc, spec, dropout })
}

/// Draws uniformly per axis and resamples until the shape and resource
/// constraints hold.
pub fn sample_trial(
    space: &SearchSpace,
    sample_rate: u32,
    window_samples: usize,
    rng: &mut seed::Rng,
) -> Result<TrialSpec, SelectionError> {
    space.validate()?;
    let mut reason = String::new();
    for _ in 0..MAX_REJECTIONS {
        match draw_once(space, sample_rate, window_samples, rng) {
            Ok(t) => return Ok(t),
            Err(r) => reason = r,
        }
    }
    Err(SelectionError::Unsatisfiable {
        rejections: MAX_REJECTIONS,
        reason,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialResult {
    pub id: usize,
    pub trial: TrialSpec,
    pub val_f1: f64,
    pub val_accuracy: f64,
    pub params: usize,
    pub macs: usize,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub model: Option<TrainedModel>,
}

/// Orders by validation F1 (descending), then fewer parameters, then lower
/// trial id. Failed trials sort last.
pub fn rank(results: &mut [TrialResult]) {
    results.sort_by(|a, b| {
        a.error
            .is_some()
            .cmp(&b.error.is_some())
            .then(b.val_f1.total_cmp(&a.val_f1))
            .then(a.params.cmp(&b.params))
            .then(a.id.cmp(&b.id))
    });
}

/// Labeled windows for the search.
#[derive(Debug, Clone)]
pub struct SearchData {
    pub train: Vec<(AudioClip, SubClass)>,
    pub val: Vec<(AudioClip, SubClass)>,
}

impl SearchData {
    fn window(&self) -> Result<(u32, usize), SelectionError> {
        let first = &self.train.first().ok_or(PipelineError::Empty("training"))?.0;
        Ok((first.sample_rate(), first.len()))
    }
}

/// Trains and scores the given trials. A trial's id is its position in `trials`.
pub fn run_trials(
    trials: &[TrialSpec],
    data: &SearchData,
    train: &TrainConfig,
    seed: u64,
    threshold: f64,
) -> Result<Vec<TrialResult>, SelectionError> {
    let (rate, window) = data.window()?;
    let mut prepared: BTreeMap<u64, (MfccExtractor, Prepared)> = BTreeMap::new();
    for t in trials {
        let fp = t.mfcc.fingerprint(rate, window);
        if !prepared.contains_key(&fp) {
            let extractor = MfccExtractor::new(&t.mfcc, rate, window).map_err(PipelineError::from)?;
            let data = pipeline::prepare(&extractor, &data.train, &data.val)?;
            prepared.insert(fp, (extractor, data));
        }
    }
    let ids: Vec<usize> = (0..trials.len()).collect();
    let mut results = crate::par_map(&ids, |&id| {
        let t = &trials[id];
        let (extractor, data) = &prepared[&t.mfcc.fingerprint(rate, window)];
        let config = TrainConfig {
            seed: seed::derive_tagged(seed, "train", id as u64),
            ..train.clone()
        };
        let params = t.spec.param_count().unwrap_or(0);
        let macs = t.spec.macs().unwrap_or(0);
        let base = TrialResult {
            id,
            trial: t.clone(),
            val_f1: 0.0,
            val_accuracy: 0.0,
            params,
            macs,
            best_epoch: None,
            history: Vec::new(),
            error: None,
            model: None,
        };
        match pipeline::train_prepared(extractor, data, &t.spec, &config, threshold) {
            Ok((model, fit)) => {
                let best = fit.best().cloned();
                TrialResult {
                    val_f1: best.as_ref().map_or(0.0, |b| b.val_f1),
                    val_accuracy: best.as_ref().map_or(0.0, |b| b.val_accuracy),
                    best_epoch: fit.best_epoch,
                    history: fit.history,
                    model: Some(model),
                    ..base
                }
            }
            Err(e) => TrialResult {
                error: Some(e.to_string()),
                ..base
            },
        }
    });
    rank(&mut results);
    Ok(results)
}

/// Samples `budget` trials, trains each, and returns them ranked.
pub fn run_search(
    space: &SearchSpace,
    data: &SearchData,
    budget: usize,
    threshold: f64,
) -> Result<Vec<TrialResult>, SelectionError> {
    space.validate()?;
    if budget == 0 {
        return Err(SelectionError::InvalidSpace("budget must be at least 1".into()));
    }
    let (rate, window) = data.window()?;
    let trials = (0..budget)
        .map(|id| {
            let mut rng = seed::rng(seed::derive_tagged(space.seed, "trial", id as u64));
            sample_trial(space, rate, window, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    run_trials(&trials, data, &space.train, space.seed, threshold)
}

/// Ranked CSV summary, one row per trial.
pub fn summary_csv(results: &[TrialResult]) -> String {
    let mut out = String::from(
        "rank,id,val_f1,val_accuracy,params,macs,frame_length_s,frame_stride_s,num_mel_filters,dropout,best_epoch,error\n",
    );
    for (rank, r) in results.iter().enumerate() {
        writeln!(
            out,
            "{},{},{:.6},{:.6},{},{},{},{},{},{:.4},{},{}",
            rank + 1,
            r.id,
            r.val_f1,
            r.val_accuracy,
            r.params,
            r.macs,
            r.trial.mfcc.frame_length_s,
            r.trial.mfcc.frame_stride_s,
            r.trial.mfcc.num_mel_filters,
            r.trial.dropout,
            r.best_epoch.map_or(String::new(), |e| e.to_string()),
            r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
        )
        .unwrap();
    }
    out
}

/// Writes one JSON record per trial under `trials/` and `summary.csv`.
pub fn write_ledger(results: &[TrialResult], out_dir: &Path) -> Result<(), SelectionError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| SelectionError::Io { path, source }
    };
    let dir = out_dir.join("trials");
    std::fs::create_dir_all(&dir).map_err(io(&dir))?;
    for r in results {
        let path = dir.join(format!("trial_{:03}.json", r.id));
        std::fs::write(&path, serde_json::to_string_pretty(r)? + "\n").map_err(io(&path))?;
    }
    let path = out_dir.join("summary.csv");
    std::fs::write(&path, summary_csv(results)).map_err(io(&path))
}

impl From<FeatureError> for SelectionError {
    fn from(e: FeatureError) -> Self {
        SelectionError::Pipeline(e.into())
    }
}
