use rand::Rng as _;

use super::{Activation, LayerParams, LayerSpec, ModelSpec, ModelWeights, NnError, Shape, NUM_CLASSES};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active (inverted scaling).
    Train,
    /// Dropout disabled; deterministic.
    Infer,
}

/// Per-layer side information needed by the backward pass.
enum Aux {
    None,
    /// Flat input index chosen by each pooled output.
    Argmax(Vec<usize>),
    /// Dropout multipliers (0 or 1 / (1 - rate)).
    Mask(Vec<f64>),
}

struct Trace {
    /// `acts[i]` is the input of layer `i`; the last entry is the network output.
    acts: Vec<Vec<f64>>,
    aux: Vec<Aux>,
}

fn activate(v: f64, act: Activation) -> f64 {
    match act {
        Activation::Relu => v.max(0.0),
        _ => v,
    }
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

fn conv1d_forward(
    input: &[f64],
    (len, ch): (usize, usize),
    p: &LayerParams,
    (filters, kernel, stride): (usize, usize, usize),
    act: Activation,
) -> Vec<f64> {
    let out_len = (len - kernel) / stride + 1;
    let mut out = vec![0.0; out_len * filters];
    for t in 0..out_len {
        let window = &input[t * stride * ch..(t * stride + kernel) * ch];
        for f in 0..filters {
            let w = &p.kernel[f * ch * kernel..(f + 1) * ch * kernel];
            let mut acc = p.bias[f];
            for c in 0..ch {
                let wc = &w[c * kernel..(c + 1) * kernel];
                for (j, wv) in wc.iter().enumerate() {
                    acc += window[j * ch + c] * wv;
                }
            }
            out[t * filters + f] = activate(acc, act);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv1d_backward(
    input: &[f64],
    output: &[f64],
    dout: &[f64],
    (len, ch): (usize, usize),
    p: &LayerParams,
    g: &mut LayerParams,
    (filters, kernel, stride): (usize, usize, usize),
    act: Activation,
) -> Vec<f64> {
    let out_len = (len - kernel) / stride + 1;
    let mut din = vec![0.0; len * ch];
    for t in 0..out_len {
        let base = t * stride * ch;
        for f in 0..filters {
            let mut dz = dout[t * filters + f];
            if act == Activation::Relu && output[t * filters + f] <= 0.0 {
                dz = 0.0;
            }
            if dz == 0.0 {
                continue;
            }
            g.bias[f] += dz;
            let off = f * ch * kernel;
            for c in 0..ch {
                for j in 0..kernel {
                    let idx = base + j * ch + c;
                    g.kernel[off + c * kernel + j] += dz * input[idx];
                    din[idx] += dz * p.kernel[off + c * kernel + j];
                }
            }
        }
    }
    din
}

fn conv2d_forward(
    input: &[f64],
    (h, w, ch): (usize, usize, usize),
    p: &LayerParams,
    (filters, k): (usize, usize),
    act: Activation,
) -> Vec<f64> {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut out = vec![0.0; oh * ow * filters];
    for y in 0..oh {
        for x in 0..ow {
            for f in 0..filters {
                let mut acc = p.bias[f];
                for c in 0..ch {
                    for dy in 0..k {
                        for dx in 0..k {
                            acc += input[((y + dy) * w + x + dx) * ch + c]
                                * p.kernel[((f * ch + c) * k + dy) * k + dx];
                        }
                    }
                }
                out[(y * ow + x) * filters + f] = activate(acc, act);
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward(
    input: &[f64],
    output: &[f64],
    dout: &[f64],
    (h, w, ch): (usize, usize, usize),
    p: &LayerParams,
    g: &mut LayerParams,
    (filters, k): (usize, usize),
    act: Activation,
) -> Vec<f64> {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut din = vec![0.0; h * w * ch];
    for y in 0..oh {
        for x in 0..ow {
            for f in 0..filters {
                let o = (y * ow + x) * filters + f;
                let mut dz = dout[o];
                if act == Activation::Relu && output[o] <= 0.0 {
                    dz = 0.0;
                }
                if dz == 0.0 {
                    continue;
                }
                g.bias[f] += dz;
                for c in 0..ch {
                    for dy in 0..k {
                        for dx in 0..k {
                            let i = ((y + dy) * w + x + dx) * ch + c;
                            let wi = ((f * ch + c) * k + dy) * k + dx;
                            g.kernel[wi] += dz * input[i];
                            din[i] += dz * p.kernel[wi];
                        }
                    }
                }
            }
        }
    }
    din
}

fn pool1d_forward(input: &[f64], (len, ch): (usize, usize), size: usize) -> (Vec<f64>, Vec<usize>) {
    let out_len = len / size;
    let mut out = Vec::with_capacity(out_len * ch);
    let mut arg = Vec::with_capacity(out_len * ch);
    for t in 0..out_len {
        for c in 0..ch {
            let mut best = (t * size) * ch + c;
            for i in 1..size {
                let idx = (t * size + i) * ch + c;
                if input[idx] > input[best] {
                    best = idx;
                }
            }
            out.push(input[best]);
            arg.push(best);
        }
    }
    (out, arg)
}

fn pool2d_forward(input: &[f64], (h, w, ch): (usize, usize, usize), size: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / size, w / size);
    let mut out = Vec::with_capacity(oh * ow * ch);
    let mut arg = Vec::with_capacity(oh * ow * ch);
    for y in 0..oh {
        for x in 0..ow {
            for c in 0..ch {
                let mut best = ((y * size) * w + x * size) * ch + c;
                for dy in 0..size {
                    for dx in 0..size {
                        let idx = ((y * size + dy) * w + x * size + dx) * ch + c;
                        if input[idx] > input[best] {
                            best = idx;
                        }
                    }
                }
                out.push(input[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

fn dense_forward(input: &[f64], p: &LayerParams, units: usize, act: Activation) -> Vec<f64> {
    let n = input.len();
    let mut out: Vec<f64> = (0..units)
        .map(|u| {
            let row = &p.kernel[u * n..(u + 1) * n];
            let z = p.bias[u] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
            activate(z, act)
        })
        .collect();
    if act == Activation::Softmax {
        softmax_in_place(&mut out);
    }
    out
}

/// Runs the network, recording what the backward pass needs. The final
/// softmax output is stored as the last activation.
fn run(
    spec: &ModelSpec,
    shapes: &[Shape],
    weights: &ModelWeights,
    input: &[f64],
    mut dropout: Option<&mut seed::Rng>,
) -> Trace {
    let mut acts = Vec::with_capacity(spec.layers.len() + 1);
    let mut aux = Vec::with_capacity(spec.layers.len());
    acts.push(input.to_vec());
    let mut prev = spec.input_shape();
    for (i, layer) in spec.layers.iter().enumerate() {
        let x = acts.last().expect("input pushed above");
        let params = weights.layers[i].as_ref();
        let (out, a) = match (*layer, prev) {
            (LayerSpec::Reshape { .. }, _) | (LayerSpec::Flatten, _) => (x.clone(), Aux::None),
            (LayerSpec::Conv1d { filters, kernel, stride, activation }, Shape::Seq { len, channels }) => (
                conv1d_forward(x, (len, channels), params.unwrap(), (filters, kernel, stride), activation),
                Aux::None,
            ),
            (LayerSpec::Conv2d { filters, kernel, activation }, Shape::Grid { height, width, channels }) => (
                conv2d_forward(x, (height, width, channels), params.unwrap(), (filters, kernel), activation),
                Aux::None,
            ),
            (LayerSpec::MaxPool1d { size }, Shape::Seq { len, channels }) => {
                let (o, arg) = pool1d_forward(x, (len, channels), size);
                (o, Aux::Argmax(arg))
            }
            (LayerSpec::MaxPool2d { size }, Shape::Grid { height, width, channels }) => {
                let (o, arg) = pool2d_forward(x, (height, width, channels), size);
                (o, Aux::Argmax(arg))
            }
            (LayerSpec::Dropout { rate }, _) => match dropout.as_deref_mut() {
                Some(rng) if rate > 0.0 => {
                    let keep = 1.0 / (1.0 - rate);
                    let mask: Vec<f64> = (0..x.len())
                        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                        .collect();
                    (x.iter().zip(&mask).map(|(v, m)| v * m).collect(), Aux::Mask(mask))
                }
                _ => (x.clone(), Aux::None),
            },
            (LayerSpec::Dense { units, activation }, Shape::Flat(_)) => {
                (dense_forward(x, params.unwrap(), units, activation), Aux::None)
            }
            _ => unreachable!("shapes validated before running"),
        };
        acts.push(out);
        aux.push(a);
        prev = shapes[i];
    }
    Trace { acts, aux }
}

/// Accumulates gradients of the loss into `grads`, given the gradient with
/// respect to the final layer's pre-softmax logits.
fn backprop(
    spec: &ModelSpec,
    shapes: &[Shape],
    weights: &ModelWeights,
    trace: &Trace,
    dlogits: Vec<f64>,
    grads: &mut ModelWeights,
) {
    let mut d = dlogits;
    for i in (0..spec.layers.len()).rev() {
        let input = &trace.acts[i];
        let output = &trace.acts[i + 1];
        let in_shape = if i == 0 { spec.input_shape() } else { shapes[i - 1] };
        let last = i + 1 == spec.layers.len();
        d = match (spec.layers[i], in_shape) {
            (LayerSpec::Reshape { .. }, _) | (LayerSpec::Flatten, _) => d,
            (LayerSpec::Conv1d { filters, kernel, stride, activation }, Shape::Seq { len, channels }) => conv1d_backward(
                input,
                output,
                &d,
                (len, channels),
                weights.layers[i].as_ref().unwrap(),
                grads.layers[i].as_mut().unwrap(),
                (filters, kernel, stride),
                activation,
            ),
            (LayerSpec::Conv2d { filters, kernel, activation }, Shape::Grid { height, width, channels }) => {
                conv2d_backward(
                    input,
                    output,
                    &d,
                    (height, width, channels),
                    weights.layers[i].as_ref().unwrap(),
                    grads.layers[i].as_mut().unwrap(),
                    (filters, kernel),
                    activation,
                )
            }
            (LayerSpec::MaxPool1d { .. }, _) | (LayerSpec::MaxPool2d { .. }, _) => {
                let Aux::Argmax(arg) = &trace.aux[i] else { unreachable!() };
                let mut din = vec![0.0; input.len()];
                for (g, &src) in d.iter().zip(arg) {
                    din[src] += g;
                }
                din
            }
            (LayerSpec::Dropout { .. }, _) => match &trace.aux[i] {
                Aux::Mask(mask) => d.iter().zip(mask).map(|(g, m)| g * m).collect(),
                _ => d,
            },
            (LayerSpec::Dense { units, activation }, Shape::Flat(n)) => {
                let p = weights.layers[i].as_ref().unwrap();
                let g = grads.layers[i].as_mut().unwrap();
                let mut din = vec![0.0; n];
                for u in 0..units {
                    let mut dz = d[u];
                    if !last && activation == Activation::Relu && output[u] <= 0.0 {
                        dz = 0.0;
                    }
                    if dz == 0.0 {
                        continue;
                    }
                    g.bias[u] += dz;
                    let row = &p.kernel[u * n..(u + 1) * n];
                    let grow = &mut g.kernel[u * n..(u + 1) * n];
                    for k in 0..n {
                        grow[k] += dz * input[k];
                        din[k] += dz * row[k];
                    }
                }
                din
            }
            _ => unreachable!("shapes validated before running"),
        };
    }
}

fn prepare(spec: &ModelSpec, weights: &ModelWeights) -> Result<Vec<Shape>, NnError> {
    let shapes = spec.shapes()?;
    weights.check(spec)?;
    Ok(shapes)
}

fn check_input(spec: &ModelSpec, input: &[f64]) -> Result<(), NnError> {
    if input.len() != spec.input_size() {
        return Err(NnError::ShapeMismatch {
            expected: spec.input_size(),
            actual: input.len(),
        });
    }
    Ok(())
}

/// Class probabilities for one input. `rng` drives dropout in train mode and
/// is ignored in inference mode.
pub fn forward(
    spec: &ModelSpec,
    weights: &ModelWeights,
    input: &[f64],
    mode: Mode,
    rng: &mut seed::Rng,
) -> Result<Vec<f64>, NnError> {
    let shapes = prepare(spec, weights)?;
    check_input(spec, input)?;
    let dropout = (mode == Mode::Train).then_some(rng);
    let mut trace = run(spec, &shapes, weights, input, dropout);
    Ok(trace.acts.pop().expect("at least one activation"))
}

/// Inference-mode probabilities for many inputs.
pub fn predict(spec: &ModelSpec, weights: &ModelWeights, inputs: &[&[f64]]) -> Result<Vec<Vec<f64>>, NnError> {
    let shapes = prepare(spec, weights)?;
    inputs
        .iter()
        .map(|x| {
            check_input(spec, x)?;
            let mut trace = run(spec, &shapes, weights, x, None);
            Ok(trace.acts.pop().expect("at least one activation"))
        })
        .collect()
}

/// Mean cross-entropy over the batch and its gradient for every parameter.
///
/// With `dropout_seed` set, dropout masks are drawn from one generator in
/// batch order; without it dropout is disabled.
pub fn loss_and_grads(
    spec: &ModelSpec,
    weights: &ModelWeights,
    batch: &[(&[f64], usize)],
    dropout_seed: Option<u64>,
) -> Result<(f64, ModelWeights), NnError> {
    if batch.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let shapes = prepare(spec, weights)?;
    let mut grads = ModelWeights::zeros(spec)?;
    let mut rng = dropout_seed.map(seed::rng);
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for &(input, label) in batch {
        check_input(spec, input)?;
        if label >= NUM_CLASSES {
            return Err(NnError::BadLabel(label));
        }
        let trace = run(spec, &shapes, weights, input, rng.as_mut());
        let probs = trace.acts.last().expect("output");
        loss -= probs[label].clamp(f64::MIN_POSITIVE, 1.0).ln();
        let dlogits: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(k, p)| scale * (p - if k == label { 1.0 } else { 0.0 }))
            .collect();
        backprop(spec, &shapes, weights, &trace, dlogits, &mut grads);
    }
    Ok((loss * scale, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_model, Layout};

    fn small_spec(filters: usize, dropout: f64) -> ModelSpec {
        ModelSpec::default_for(31, 13, filters, 3, dropout)
    }

    fn random_input(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = seed::rng(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_model_is_uniform() {
        let spec = small_spec(32, 0.25);
        let w = ModelWeights::zeros(&spec).unwrap();
        let p = forward(&spec, &w, &vec![0.0; 403], Mode::Infer, &mut seed::rng(0)).unwrap();
        assert_eq!(p.len(), 8);
        assert!(p.iter().all(|&v| (v - 0.125).abs() < 1e-15));
    }

    #[test]
    fn inference_is_deterministic_and_normalized() {
        let spec = small_spec(32, 0.5);
        let w = init_model(&spec, 1).unwrap();
        let x = random_input(2, 403);
        let a = forward(&spec, &w, &x, Mode::Infer, &mut seed::rng(0)).unwrap();
        let b = forward(&spec, &w, &x, Mode::Infer, &mut seed::rng(99)).unwrap();
        assert_eq!(a, b);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let t = forward(&spec, &w, &x, Mode::Train, &mut seed::rng(5)).unwrap();
        assert_ne!(a, t);
    }

    #[test]
    fn shape_mismatch_reported() {
        let spec = small_spec(4, 0.0);
        let w = init_model(&spec, 1).unwrap();
        assert!(matches!(
            forward(&spec, &w, &[0.0; 10], Mode::Infer, &mut seed::rng(0)),
            Err(NnError::ShapeMismatch { expected: 403, actual: 10 })
        ));
    }

    #[test]
    fn uniform_output_loss_is_ln8() {
        let spec = small_spec(4, 0.0);
        let w = ModelWeights::zeros(&spec).unwrap();
        let x = random_input(3, 403);
        let batch: Vec<(&[f64], usize)> = (0..8).map(|l| (x.as_slice(), l)).collect();
        let (loss, _) = loss_and_grads(&spec, &w, &batch, None).unwrap();
        assert!((loss - 8f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn confident_correct_model_has_tiny_loss() {
        let spec = small_spec(4, 0.0);
        let mut w = ModelWeights::zeros(&spec).unwrap();
        let dense = w.layers.last_mut().unwrap().as_mut().unwrap();
        dense.bias[3] = 50.0;
        let x = random_input(4, 403);
        let (loss, grads) = loss_and_grads(&spec, &w, &[(&x, 3)], None).unwrap();
        assert!(loss < 1e-20);
        assert!(grads.iter().all(|g| g.abs() < 1e-20));
    }

    #[test]
    fn dropout_expectation_matches_undropped() {
        // Mean of an inverted-dropout activation over many masks.
        let spec = ModelSpec {
            input_frames: 1,
            input_coeffs: 8,
            layers: vec![
                LayerSpec::Reshape { layout: Layout::Sequence },
                LayerSpec::Dropout { rate: 0.4 },
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 8, activation: Activation::Softmax },
            ],
        };
        let shapes = spec.shapes().unwrap();
        let w = ModelWeights::zeros(&spec).unwrap();
        let x = vec![0.7; 8];
        let mut rng = seed::rng(17);
        let mut sum = 0.0;
        let n = 10_000;
        for _ in 0..n {
            let trace = run(&spec, &shapes, &w, &x, Some(&mut rng));
            sum += trace.acts[2][0];
        }
        let mean = sum / n as f64;
        assert!((mean - 0.7).abs() / 0.7 < 0.03, "mean {mean}");
    }
}
