//! A small neural-network engine: valid 1D/2D convolution, max pooling,
//! dropout, dense layers and softmax cross-entropy, with hand-written
//! reverse-mode gradients.
//!
//! Tensors are flat `Vec<f64>` in row-major order. A sequence of length `L`
//! with `C` channels is stored time-major (`L × C`), which is also how a
//! [`FeatureMatrix`](crate::FeatureMatrix) lays out frames × coefficients, so
//! the leading reshape never moves data.

mod gradcheck;
mod layers;
mod train;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

pub use gradcheck::{gradient_check, GradCheck, GRAD_CHECK_EPSILON};
pub use layers::{forward, loss_and_grads, predict, Mode};
pub use train::{fit, EpochStats, FitResult, TrainConfig};

/// Number of output subclasses.
pub const NUM_CLASSES: usize = 8;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("input has {actual} values, model expects {expected}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("weights do not match the model spec: {0}")]
    WeightMismatch(String),
    #[error("label {0} is out of range")]
    BadLabel(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    None,
    Relu,
    Softmax,
}

fn relu() -> Activation {
    Activation::Relu
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// frames × coefficients read as a sequence with one channel per coefficient.
    Sequence,
    /// frames × coefficients read as a single-channel image.
    Image,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Reshape {
        layout: Layout,
    },
    Conv1d {
        filters: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default = "relu")]
        activation: Activation,
    },
    Conv2d {
        filters: usize,
        kernel: usize,
        #[serde(default = "relu")]
        activation: Activation,
    },
    MaxPool1d {
        size: usize,
    },
    MaxPool2d {
        size: usize,
    },
    Dropout {
        rate: f64,
    },
    Flatten,
    Dense {
        units: usize,
        activation: Activation,
    },
}

impl LayerSpec {
    pub fn conv1d(filters: usize, kernel: usize) -> Self {
        Self::Conv1d {
            filters,
            kernel,
            stride: 1,
            activation: Activation::Relu,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, Self::Conv1d { .. } | Self::Conv2d { .. } | Self::Dense { .. })
    }
}

/// Activation shape between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// Raw frames × coefficients input.
    Matrix { rows: usize, cols: usize },
    Seq { len: usize, channels: usize },
    Grid { height: usize, width: usize, channels: usize },
    Flat(usize),
}

impl Shape {
    pub fn size(&self) -> usize {
        match *self {
            Shape::Matrix { rows, cols } => rows * cols,
            Shape::Seq { len, channels } => len * channels,
            Shape::Grid { height, width, channels } => height * width * channels,
            Shape::Flat(n) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_frames: usize,
    pub input_coeffs: usize,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// reshape → [conv1d → maxpool(2) → dropout] × 2 → flatten → dense(8, softmax).
    pub fn default_for(frames: usize, coeffs: usize, filters: usize, kernel: usize, dropout: f64) -> Self {
        let block = [
            LayerSpec::conv1d(filters, kernel),
            LayerSpec::MaxPool1d { size: 2 },
            LayerSpec::Dropout { rate: dropout },
        ];
        let mut layers = vec![LayerSpec::Reshape { layout: Layout::Sequence }];
        layers.extend(block);
        layers.extend(block);
        layers.push(LayerSpec::Flatten);
        layers.push(LayerSpec::Dense {
            units: NUM_CLASSES,
            activation: Activation::Softmax,
        });
        Self {
            input_frames: frames,
            input_coeffs: coeffs,
            layers,
        }
    }

    pub fn input_shape(&self) -> Shape {
        Shape::Matrix {
            rows: self.input_frames,
            cols: self.input_coeffs,
        }
    }

    pub fn input_size(&self) -> usize {
        self.input_frames * self.input_coeffs
    }

    /// Shape after every layer (same length as `layers`).
    pub fn shapes(&self) -> Result<Vec<Shape>, NnError> {
        let bad = |i: usize, m: String| NnError::InvalidSpec(format!("layer {i}: {m}"));
        let mut shape = self.input_shape();
        if shape.size() == 0 {
            return Err(NnError::InvalidSpec("empty input".into()));
        }
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match (*layer, shape) {
                (LayerSpec::Reshape { layout: Layout::Sequence }, Shape::Matrix { rows, cols }) => {
                    Shape::Seq { len: rows, channels: cols }
                }
                (LayerSpec::Reshape { layout: Layout::Image }, Shape::Matrix { rows, cols }) => Shape::Grid {
                    height: rows,
                    width: cols,
                    channels: 1,
                },
                (LayerSpec::Reshape { .. }, s) => return Err(bad(i, format!("reshape expects the raw input, got {s:?}"))),
                (LayerSpec::Conv1d { filters, kernel, stride, activation }, Shape::Seq { len, .. }) => {
                    if filters == 0 || kernel == 0 || stride == 0 {
                        return Err(bad(i, "filters, kernel and stride must be positive".into()));
                    }
                    if kernel > len {
                        return Err(bad(i, format!("kernel {kernel} exceeds sequence length {len}")));
                    }
                    if activation == Activation::Softmax {
                        return Err(bad(i, "softmax is only allowed on the final dense layer".into()));
                    }
                    Shape::Seq {
                        len: (len - kernel) / stride + 1,
                        channels: filters,
                    }
                }
                (LayerSpec::Conv2d { filters, kernel, activation }, Shape::Grid { height, width, .. }) => {
                    if filters == 0 || kernel == 0 {
                        return Err(bad(i, "filters and kernel must be positive".into()));
                    }
                    if kernel > height || kernel > width {
                        return Err(bad(i, format!("kernel {kernel} exceeds image {height}×{width}")));
                    }
                    if activation == Activation::Softmax {
                        return Err(bad(i, "softmax is only allowed on the final dense layer".into()));
                    }
                    Shape::Grid {
                        height: height - kernel + 1,
                        width: width - kernel + 1,
                        channels: filters,
                    }
                }
                (LayerSpec::MaxPool1d { size }, Shape::Seq { len, channels }) => {
                    if size == 0 || len / size == 0 {
                        return Err(bad(i, format!("pool size {size} invalid for length {len}")));
                    }
                    Shape::Seq { len: len / size, channels }
                }
                (LayerSpec::MaxPool2d { size }, Shape::Grid { height, width, channels }) => {
                    if size == 0 || height / size == 0 || width / size == 0 {
                        return Err(bad(i, format!("pool size {size} invalid for {height}×{width}")));
                    }
                    Shape::Grid {
                        height: height / size,
                        width: width / size,
                        channels,
                    }
                }
                (LayerSpec::Dropout { rate }, s) => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(bad(i, format!("dropout rate {rate} outside [0, 1)")));
                    }
                    s
                }
                (LayerSpec::Flatten, s) => Shape::Flat(s.size()),
                (LayerSpec::Dense { units, activation }, Shape::Flat(_)) => {
                    if units == 0 {
                        return Err(bad(i, "dense units must be positive".into()));
                    }
                    if activation == Activation::Softmax && i + 1 != self.layers.len() {
                        return Err(bad(i, "softmax is only allowed on the final dense layer".into()));
                    }
                    Shape::Flat(units)
                }
                (l, s) => return Err(bad(i, format!("{l:?} cannot follow shape {s:?}"))),
            };
            out.push(shape);
        }
        match self.layers.last() {
            Some(LayerSpec::Dense {
                units: NUM_CLASSES,
                activation: Activation::Softmax,
            }) => Ok(out),
            _ => Err(NnError::InvalidSpec(format!(
                "final layer must be dense({NUM_CLASSES}, softmax)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        self.shapes().map(|_| ())
    }

    /// Kernel and bias sizes of every layer (zero for parameter-free layers).
    pub fn param_shapes(&self) -> Result<Vec<(usize, usize)>, NnError> {
        let shapes = self.shapes()?;
        let mut prev = self.input_shape();
        let mut out = Vec::with_capacity(self.layers.len());
        for (layer, shape) in self.layers.iter().zip(&shapes) {
            let sizes = match (*layer, prev) {
                (LayerSpec::Conv1d { filters, kernel, .. }, Shape::Seq { channels, .. }) => {
                    (filters * channels * kernel, filters)
                }
                (LayerSpec::Conv2d { filters, kernel, .. }, Shape::Grid { channels, .. }) => {
                    (filters * channels * kernel * kernel, filters)
                }
                (LayerSpec::Dense { units, .. }, Shape::Flat(n)) => (units * n, units),
                _ => (0, 0),
            };
            out.push(sizes);
            prev = *shape;
        }
        Ok(out)
    }

    pub fn param_count(&self) -> Result<usize, NnError> {
        Ok(self.param_shapes()?.iter().map(|(k, b)| k + b).sum())
    }

    /// Multiply-accumulates for one forward pass.
    pub fn macs(&self) -> Result<usize, NnError> {
        let shapes = self.shapes()?;
        let mut prev = self.input_shape();
        let mut total = 0;
        for (layer, shape) in self.layers.iter().zip(&shapes) {
            total += match (*layer, prev, *shape) {
                (LayerSpec::Conv1d { kernel, .. }, Shape::Seq { channels, .. }, out) => out.size() * channels * kernel,
                (LayerSpec::Conv2d { kernel, .. }, Shape::Grid { channels, .. }, out) => {
                    out.size() * channels * kernel * kernel
                }
                (LayerSpec::Dense { units, .. }, Shape::Flat(n), _) => units * n,
                _ => 0,
            };
            prev = *shape;
        }
        Ok(total)
    }

    pub fn uses_conv2d(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, LayerSpec::Conv2d { .. } | LayerSpec::MaxPool2d { .. } | LayerSpec::Reshape { layout: Layout::Image }))
    }
}

/// Kernel and bias of one parameterized layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameters for every layer of a [`ModelSpec`]; `None` for layers without
/// parameters. The same type carries gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    pub layers: Vec<Option<LayerParams>>,
}

impl ModelWeights {
    pub fn zeros(spec: &ModelSpec) -> Result<Self, NnError> {
        Ok(Self {
            layers: spec
                .param_shapes()?
                .into_iter()
                .map(|(k, b)| {
                    (k > 0).then(|| LayerParams {
                        kernel: vec![0.0; k],
                        bias: vec![0.0; b],
                    })
                })
                .collect(),
        })
    }

    pub fn check(&self, spec: &ModelSpec) -> Result<(), NnError> {
        let shapes = spec.param_shapes()?;
        if shapes.len() != self.layers.len() {
            return Err(NnError::WeightMismatch(format!(
                "{} layers in weights, {} in spec",
                self.layers.len(),
                shapes.len()
            )));
        }
        for (i, ((k, b), params)) in shapes.iter().zip(&self.layers).enumerate() {
            let ok = match params {
                None => *k == 0,
                Some(p) => p.kernel.len() == *k && p.bias.len() == *b,
            };
            if !ok {
                return Err(NnError::WeightMismatch(format!("layer {i} has the wrong size")));
            }
        }
        if !self.iter().all(|v| v.is_finite()) {
            return Err(NnError::WeightMismatch("non-finite parameter".into()));
        }
        Ok(())
    }

    /// All parameters in layer order, kernel before bias.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flatten().flat_map(|p| p.kernel.iter().chain(&p.bias))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flatten()
            .flat_map(|p| p.kernel.iter_mut().chain(p.bias.iter_mut()))
    }

    pub fn len(&self) -> usize {
        self.iter().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// He-uniform kernels (bound `sqrt(6 / fan_in)`) and zero biases.
pub fn init_model(spec: &ModelSpec, seed: u64) -> Result<ModelWeights, NnError> {
    let mut weights = ModelWeights::zeros(spec)?;
    let shapes = spec.shapes()?;
    let mut rng = seed::rng(seed);
    let mut prev = spec.input_shape();
    for ((layer, shape), params) in spec.layers.iter().zip(&shapes).zip(weights.layers.iter_mut()) {
        if let Some(p) = params {
            let fan_in = match (*layer, prev) {
                (LayerSpec::Conv1d { kernel, .. }, Shape::Seq { channels, .. }) => channels * kernel,
                (LayerSpec::Conv2d { kernel, .. }, Shape::Grid { channels, .. }) => channels * kernel * kernel,
                (LayerSpec::Dense { .. }, Shape::Flat(n)) => n,
                _ => unreachable!("parameters only exist on conv and dense layers"),
            };
            let bound = (6.0 / fan_in as f64).sqrt();
            for w in &mut p.kernel {
                *w = rng.random_range(-bound..bound);
            }
        }
        prev = *shape;
    }
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shapes_and_counts() {
        let spec = ModelSpec::default_for(31, 13, 32, 3, 0.25);
        let lens: Vec<usize> = spec
            .shapes()
            .unwrap()
            .iter()
            .map(|s| match s {
                Shape::Seq { len, .. } => *len,
                Shape::Flat(n) => *n,
                _ => 0,
            })
            .collect();
        assert_eq!(lens, vec![31, 29, 14, 14, 12, 6, 6, 192, 8]);
        assert_eq!(spec.param_count().unwrap(), 5928);
        let ps = spec.param_shapes().unwrap();
        assert_eq!(ps[1], (32 * 13 * 3, 32));
        assert_eq!(spec.macs().unwrap(), 29 * 32 * 13 * 3 + 12 * 32 * 32 * 3 + 8 * 192);
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let spec = ModelSpec::default_for(31, 13, 32, 3, 0.25);
        let a = init_model(&spec, 3).unwrap();
        let b = init_model(&spec, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_model(&spec, 4).unwrap());
        for p in a.layers.iter().flatten() {
            assert!(p.bias.iter().all(|&v| v == 0.0));
        }
        let conv1 = a.layers[1].as_ref().unwrap();
        assert_eq!(conv1.kernel.len(), 32 * 13 * 3);
        let bound = (6.0f64 / 39.0).sqrt();
        assert!(conv1.kernel.iter().all(|w| w.abs() <= bound));
        a.check(&spec).unwrap();
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = ModelSpec::default_for(31, 13, 32, 3, 0.25);
        spec.layers.pop();
        assert!(spec.validate().is_err());

        let spec = ModelSpec::default_for(31, 13, 32, 40, 0.25);
        assert!(matches!(spec.validate(), Err(NnError::InvalidSpec(m)) if m.contains("kernel")));

        let spec = ModelSpec::default_for(31, 13, 32, 3, 1.0);
        assert!(spec.validate().is_err());

        let no_reshape = ModelSpec {
            input_frames: 31,
            input_coeffs: 13,
            layers: vec![
                LayerSpec::conv1d(4, 3),
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 8, activation: Activation::Softmax },
            ],
        };
        assert!(no_reshape.validate().is_err());
    }

    #[test]
    fn conv2d_shapes() {
        let spec = ModelSpec {
            input_frames: 31,
            input_coeffs: 13,
            layers: vec![
                LayerSpec::Reshape { layout: Layout::Image },
                LayerSpec::Conv2d { filters: 4, kernel: 3, activation: Activation::Relu },
                LayerSpec::MaxPool2d { size: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 8, activation: Activation::Softmax },
            ],
        };
        let shapes = spec.shapes().unwrap();
        assert_eq!(shapes[1], Shape::Grid { height: 29, width: 11, channels: 4 });
        assert_eq!(shapes[2], Shape::Grid { height: 14, width: 5, channels: 4 });
        assert_eq!(spec.param_count().unwrap(), 4 * 9 + 4 + 8 * 280 + 8);
        assert!(spec.uses_conv2d());
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = ModelSpec::default_for(31, 13, 32, 3, 0.25);
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"kind\":\"conv1d\""));
        let back: ModelSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
