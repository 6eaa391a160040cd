//! A trained model bundled with its front end: MFCC → normalize → forward.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;
use crate::dataset::SubClass;
use crate::features::{FeatureError, FeatureMatrix, MfccConfig, MfccExtractor, NormStats};
use crate::nn::{self, FitResult, ModelSpec, ModelWeights, NnError, TrainConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("model input is {spec_frames}x{spec_coeffs} but features are {frames}x{coeffs}")]
    InputMismatch {
        spec_frames: usize,
        spec_coeffs: usize,
        frames: usize,
        coeffs: usize,
    },
    #[error("threshold must be in (0, 1), got {0}")]
    BadThreshold(f64),
    #[error("no {0} samples")]
    Empty(&'static str),
}

/// Everything needed to classify a raw window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub sample_rate: u32,
    pub window_samples: usize,
    pub mfcc: MfccConfig,
    pub stats: NormStats,
    pub spec: ModelSpec,
    pub weights: ModelWeights,
    pub threshold: f64,
}

impl TrainedModel {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let frames = self.mfcc.num_frames(self.sample_rate, self.window_samples);
        let coeffs = self.mfcc.num_cepstral_coeffs;
        if frames != self.spec.input_frames || coeffs != self.spec.input_coeffs {
            return Err(PipelineError::InputMismatch {
                spec_frames: self.spec.input_frames,
                spec_coeffs: self.spec.input_coeffs,
                frames,
                coeffs,
            });
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(PipelineError::BadThreshold(self.threshold));
        }
        self.weights.check(&self.spec)?;
        Ok(())
    }
}

/// A [`TrainedModel`] with its feature extractor built once.
#[derive(Debug, Clone)]
pub struct Pipeline {
    model: TrainedModel,
    extractor: MfccExtractor,
}

impl Pipeline {
    pub fn new(model: TrainedModel) -> Result<Self, PipelineError> {
        model.validate()?;
        let extractor = MfccExtractor::new(&model.mfcc, model.sample_rate, model.window_samples)?;
        Ok(Self { model, extractor })
    }

    pub fn model(&self) -> &TrainedModel {
        &self.model
    }

    pub fn extractor(&self) -> &MfccExtractor {
        &self.extractor
    }

    /// Normalized features of one window.
    pub fn features(&self, samples: &[f64]) -> Result<FeatureMatrix, PipelineError> {
        let raw = self.extractor.compute(samples)?;
        Ok(crate::features::normalize(&raw, &self.model.stats)?)
    }

    /// Subclass probabilities for one window of raw samples.
    pub fn classify(&self, samples: &[f64]) -> Result<Vec<f64>, PipelineError> {
        let fm = self.features(samples)?;
        let mut out = nn::predict(&self.model.spec, &self.model.weights, &[&fm.values])?;
        Ok(out.pop().expect("one prediction"))
    }

    pub fn classify_clip(&self, clip: &AudioClip) -> Result<Vec<f64>, PipelineError> {
        if clip.sample_rate() != self.model.sample_rate {
            return Err(FeatureError::RateMismatch {
                expected: self.model.sample_rate,
                actual: clip.sample_rate(),
            }
            .into());
        }
        self.classify(clip.samples())
    }
}

/// Raw (unnormalized) features for many windows.
pub fn extract_all(extractor: &MfccExtractor, clips: &[AudioClip]) -> Result<Vec<FeatureMatrix>, PipelineError> {
    crate::par_map(clips, |c| extractor.compute_clip(c))
        .into_iter()
        .map(|r| r.map_err(PipelineError::from))
        .collect()
}

/// Labeled windows ready for training.
pub struct Prepared {
    pub stats: NormStats,
    pub train: Vec<(Vec<f64>, usize)>,
    pub val: Vec<(Vec<f64>, usize)>,
}

/// Extracts features, fits normalization on the training split only and
/// normalizes both splits.
pub fn prepare(
    extractor: &MfccExtractor,
    train: &[(AudioClip, SubClass)],
    val: &[(AudioClip, SubClass)],
) -> Result<Prepared, PipelineError> {
    if train.is_empty() {
        return Err(PipelineError::Empty("training"));
    }
    if val.is_empty() {
        return Err(PipelineError::Empty("validation"));
    }
    let split = |data: &[(AudioClip, SubClass)]| {
        let clips: Vec<AudioClip> = data.iter().map(|(c, _)| c.clone()).collect();
        extract_all(extractor, &clips)
    };
    let train_fm = split(train)?;
    let val_fm = split(val)?;
    let stats = NormStats::fit(&train_fm)?;
    let norm = |fms: Vec<FeatureMatrix>, data: &[(AudioClip, SubClass)]| -> Result<Vec<(Vec<f64>, usize)>, PipelineError> {
        fms.iter()
            .zip(data)
            .map(|(fm, (_, label))| Ok((crate::features::normalize(fm, &stats)?.values, label.index())))
            .collect()
    };
    Ok(Prepared {
        train: norm(train_fm, train)?,
        val: norm(val_fm, val)?,
        stats,
    })
}

fn as_refs(d: &[(Vec<f64>, usize)]) -> Vec<(&[f64], usize)> {
    d.iter().map(|(x, l)| (x.as_slice(), *l)).collect()
}

/// Trains `spec` on prepared data and bundles the result.
pub fn train_prepared(
    extractor: &MfccExtractor,
    data: &Prepared,
    spec: &ModelSpec,
    config: &TrainConfig,
    threshold: f64,
) -> Result<(TrainedModel, FitResult), PipelineError> {
    let fit = nn::fit(spec, &as_refs(&data.train), &as_refs(&data.val), config)?;
    let model = TrainedModel {
        sample_rate: extractor.sample_rate(),
        window_samples: extractor.window_samples(),
        mfcc: extractor.config().clone(),
        stats: data.stats.clone(),
        spec: spec.clone(),
        weights: fit.weights.clone(),
        threshold,
    };
    model.validate()?;
    Ok((model, fit))
}

/// Feature extraction, normalization and training in one call.
pub fn train_model(
    train: &[(AudioClip, SubClass)],
    val: &[(AudioClip, SubClass)],
    mfcc: &MfccConfig,
    spec: &ModelSpec,
    config: &TrainConfig,
    threshold: f64,
) -> Result<(TrainedModel, FitResult), PipelineError> {
    let first = &train.first().ok_or(PipelineError::Empty("training"))?.0;
    let extractor = MfccExtractor::new(mfcc, first.sample_rate(), first.len())?;
    let data = prepare(&extractor, train, val)?;
    train_prepared(&extractor, &data, spec, config, threshold)
}
