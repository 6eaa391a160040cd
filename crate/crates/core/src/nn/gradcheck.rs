use rand::Rng as _;

use super::layers::loss_and_grads;
use super::{init_model, ModelSpec, NnError, NUM_CLASSES};
use crate::seed;

/// Central-difference step.
pub const GRAD_CHECK_EPSILON: f64 = 1e-4;
/// Gradient magnitudes below this are compared on an absolute scale.
const MAGNITUDE_FLOOR: f64 = 1e-5;
const MAX_PARAMS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub params_checked: usize,
}

/// Compares analytic gradients with central differences on random data and
/// random weights (dropout off).
///
/// The relative error of one component is `|a - n| / max(|a|, |n|, 1e-5)`.
pub fn gradient_check(spec: &ModelSpec, seed: u64) -> Result<GradCheck, NnError> {
    let mut weights = init_model(spec, seed)?;
    let n_params = weights.len();
    if n_params > MAX_PARAMS {
        return Err(NnError::InvalidSpec(format!(
            "{n_params} parameters is too many for a finite-difference check"
        )));
    }
    let mut rng = seed::rng(seed::derive_tagged(seed, "gradcheck", 0));
    // Non-zero biases so their gradients are exercised away from the origin.
    for p in weights.layers.iter_mut().flatten() {
        for b in &mut p.bias {
            *b = rng.random_range(-0.1..0.1);
        }
    }
    let inputs: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..spec.input_size()).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let labels: Vec<usize> = (0..2).map(|_| rng.random_range(0..NUM_CLASSES)).collect();
    let batch: Vec<(&[f64], usize)> = inputs.iter().map(|x| x.as_slice()).zip(labels).collect();

    let (_, analytic) = loss_and_grads(spec, &weights, &batch, None)?;
    let analytic: Vec<f64> = analytic.iter().copied().collect();
    let mut max_err: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let original = *weights.iter().nth(i).expect("index in range");
        let mut eval = |value: f64| -> Result<f64, NnError> {
            *weights.iter_mut().nth(i).expect("index in range") = value;
            Ok(loss_and_grads(spec, &weights, &batch, None)?.0)
        };
        let plus = eval(original + GRAD_CHECK_EPSILON)?;
        let minus = eval(original - GRAD_CHECK_EPSILON)?;
        eval(original)?;
        let numeric = (plus - minus) / (2.0 * GRAD_CHECK_EPSILON);
        let scale = a.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
        max_err = max_err.max((a - numeric).abs() / scale);
    }
    Ok(GradCheck {
        max_relative_error: max_err,
        params_checked: n_params,
    })
}
