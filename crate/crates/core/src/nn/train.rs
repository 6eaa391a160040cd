use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::layers::{loss_and_grads, predict};
use super::{init_model, ModelSpec, ModelWeights, NnError};
use crate::seed;
use crate::selection::metrics::{argmax, collapse_to_parent, f1_name, ConfusionMatrix8};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Epochs without a validation F1 improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            patience: 15,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, train_len: usize) -> Result<(), NnError> {
        if self.batch_size == 0 {
            return Err(NnError::InvalidConfig("batch_size must be positive"));
        }
        if self.batch_size > train_len {
            return Err(NnError::InvalidConfig("batch_size exceeds the training set"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::InvalidConfig("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(NnError::InvalidConfig("beta1 and beta2 must be in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(NnError::InvalidConfig("epsilon must be positive"));
        }
        if self.patience == 0 {
            return Err(NnError::InvalidConfig("patience must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub val_f1: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Weights from the epoch with the best validation F1.
    pub weights: ModelWeights,
    pub history: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
}

impl FitResult {
    pub fn best(&self) -> Option<&EpochStats> {
        self.best_epoch.map(|e| &self.history[e])
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, weights: &mut ModelWeights, grads: &ModelWeights, cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        for (((w, g), m), v) in weights.iter_mut().zip(grads.iter()).zip(&mut self.m).zip(&mut self.v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *w -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
        }
    }
}

/// Validation parent-class F1 and accuracy.
pub(crate) fn evaluate(
    spec: &ModelSpec,
    weights: &ModelWeights,
    data: &[(&[f64], usize)],
) -> Result<(f64, f64, ConfusionMatrix8), NnError> {
    let inputs: Vec<&[f64]> = data.iter().map(|(x, _)| *x).collect();
    let probs = predict(spec, weights, &inputs)?;
    let mut cm = ConfusionMatrix8::default();
    for (p, (_, label)) in probs.iter().zip(data) {
        cm.add(*label, argmax(p));
    }
    let cm2 = collapse_to_parent(&cm);
    Ok((f1_name(&cm2), cm2.accuracy(), cm))
}

/// Mini-batch Adam. Returns the weights of the epoch with the best validation
/// parent-class F1 (earliest on ties) and stops after `patience` epochs
/// without improvement.
pub fn fit(
    spec: &ModelSpec,
    train: &[(&[f64], usize)],
    val: &[(&[f64], usize)],
    config: &TrainConfig,
) -> Result<FitResult, NnError> {
    spec.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    config.validate(train.len())?;
    let mut weights = init_model(spec, seed::derive_tagged(config.seed, "init", 0))?;
    let mut best = (weights.clone(), None::<usize>, f64::NEG_INFINITY);
    let mut history = Vec::new();
    let mut adam = Adam::new(weights.len());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0u64;

    for epoch in 0..config.epochs {
        order.shuffle(&mut seed::rng(seed::derive_tagged(config.seed, "shuffle", epoch as u64)));
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&[f64], usize)> = chunk.iter().map(|&i| train[i]).collect();
            let dropout_seed = seed::derive_tagged(config.seed, "dropout", step);
            step += 1;
            let (loss, grads) = loss_and_grads(spec, &weights, &batch, Some(dropout_seed))?;
            if !loss.is_finite() {
                return Err(NnError::Diverged { epoch });
            }
            total += loss * batch.len() as f64;
            adam.update(&mut weights, &grads, config);
        }
        if !weights.iter().all(|w| w.is_finite()) {
            return Err(NnError::Diverged { epoch });
        }
        let (val_f1, val_accuracy, _) = evaluate(spec, &weights, val)?;
        history.push(EpochStats {
            epoch,
            loss: total / train.len() as f64,
            val_f1,
            val_accuracy,
        });
        if val_f1 > best.2 {
            best = (weights.clone(), Some(epoch), val_f1);
        } else if best.1.is_some_and(|b| epoch - b >= config.patience) {
            break;
        }
    }
    Ok(FitResult {
        weights: best.0,
        history,
        best_epoch: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerSpec, Layout};
    use rand::Rng as _;

    /// Two Gaussian clusters mapped to subclasses 0 (keyword) and 4 (background).
    fn clusters(n: usize, seed: u64) -> Vec<(Vec<f64>, usize)> {
        let mut rng = seed::rng(seed);
        (0..n)
            .map(|i| {
                let label = if i % 2 == 0 { 0 } else { 4 };
                let center = if label == 0 { 1.0 } else { -1.0 };
                let x = (0..12).map(|_| center + rng.random_range(-0.5..0.5)).collect();
                (x, label)
            })
            .collect()
    }

    fn toy_spec() -> ModelSpec {
        ModelSpec {
            input_frames: 6,
            input_coeffs: 2,
            layers: vec![
                LayerSpec::Reshape { layout: Layout::Sequence },
                LayerSpec::conv1d(4, 3),
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 8, activation: Activation::Softmax },
            ],
        }
    }

    fn as_refs(data: &[(Vec<f64>, usize)]) -> Vec<(&[f64], usize)> {
        data.iter().map(|(x, l)| (x.as_slice(), *l)).collect()
    }

    #[test]
    fn separable_data_is_learned() {
        let train = clusters(64, 1);
        let val = clusters(32, 2);
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 8,
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let out = fit(&toy_spec(), &as_refs(&train), &as_refs(&val), &cfg).unwrap();
        let (f1, acc, _) = evaluate(&toy_spec(), &out.weights, &as_refs(&train)).unwrap();
        assert_eq!((f1, acc), (1.0, 1.0));
    }

    #[test]
    fn zero_epochs_returns_initial_weights() {
        let train = clusters(16, 1);
        let cfg = TrainConfig {
            epochs: 0,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let out = fit(&toy_spec(), &as_refs(&train), &as_refs(&train), &cfg).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.weights, init_model(&toy_spec(), seed::derive_tagged(0, "init", 0)).unwrap());
    }

    #[test]
    fn training_is_bit_deterministic() {
        let train = clusters(40, 3);
        let val = clusters(20, 4);
        let spec = ModelSpec::default_for(6, 2, 4, 2, 0.3);
        let spec = ModelSpec {
            layers: spec.layers.into_iter().filter(|l| !matches!(l, LayerSpec::MaxPool1d { .. })).collect(),
            ..spec
        };
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 8,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = fit(&spec, &as_refs(&train), &as_refs(&val), &cfg).unwrap();
        let b = fit(&spec, &as_refs(&train), &as_refs(&val), &cfg).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn config_errors() {
        let train = clusters(4, 1);
        let cfg = TrainConfig {
            batch_size: 10,
            ..TrainConfig::default()
        };
        assert!(matches!(
            fit(&toy_spec(), &as_refs(&train), &as_refs(&train), &cfg),
            Err(NnError::InvalidConfig(_))
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let train = clusters(8, 1);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            learning_rate: 1e300,
            ..TrainConfig::default()
        };
        assert!(matches!(
            fit(&toy_spec(), &as_refs(&train), &as_refs(&train), &cfg),
            Err(NnError::Diverged { epoch: 0 })
        ));
    }
}
