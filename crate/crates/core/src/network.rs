//! Finite-width networks: initialization, forward evaluation, parameter
//! gradients, and empirical tangent kernels.
//!
//! A network of depth L is a chain of L affine layers with the activation
//! applied between them. The 1/sqrt(width) factor is applied in the forward
//! pass itself, never folded into the stored parameters, so the empirical
//! tangent kernel has the normalization the limiting recursion expects.
//! Initialization draws standard normals scaled by the weight and bias
//! amplitudes of the architecture; the square-root first-layer convention
//! keeps the same forward pass and adjusts only the first-layer draw
//! variances so both the preactivation covariance and the tangent kernel
//! match their limits.

use crate::activations::ActivationSpec;
use crate::gauss::SeededSampler;
use crate::kernels::{ArchitectureConfig, Layer1Convention, TrainingSet};
use crate::linalg::Mat;
use rayon::prelude::*;
use thiserror::Error;

/// Errors from finite-width network operations.
#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("expected {expected} hidden widths for depth {depth}, got {got}")]
    BadWidthCount { expected: usize, got: usize, depth: usize },
    #[error("hidden width {index} is zero")]
    ZeroWidth { index: usize },
    #[error("input has dimension {got}, network expects {expected}")]
    InputDimension { expected: usize, got: usize },
    #[error("parameter stack does not match the architecture: {0}")]
    ShapeMismatch(String),
    #[error("at least one sample is required, got {0}")]
    NoSamples(usize),
    #[error("direction has length {got}, parameter count is {expected}")]
    DirectionLength { expected: usize, got: usize },
}

/// Weights and biases of one affine layer.
#[derive(Clone, Debug)]
pub struct LayerParams {
    /// Maps the incoming activation vector to preactivations, one row per
    /// output unit.
    pub weights: Mat,
    pub biases: Vec<f64>,
}

/// Full parameter stack of a network, outermost layer last.
#[derive(Clone, Debug)]
pub struct NetworkParams {
    pub layers: Vec<LayerParams>,
}

impl NetworkParams {
    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.rows() * l.weights.cols() + l.biases.len())
            .sum()
    }

    /// Flattens in gradient order: per layer, weights row-major, then biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for layer in &self.layers {
            out.extend_from_slice(layer.weights.data());
            out.extend_from_slice(&layer.biases);
        }
        out
    }

    /// Adds `scale * direction` to the parameters, in flatten order.
    pub fn add_scaled(&mut self, direction: &[f64], scale: f64) -> Result<(), NetworkError> {
        let expected = self.parameter_count();
        if direction.len() != expected {
            return Err(NetworkError::DirectionLength { expected, got: direction.len() });
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let (rows, cols) = (layer.weights.rows(), layer.weights.cols());
            for i in 0..rows {
                for j in 0..cols {
                    layer.weights[(i, j)] += scale * direction[offset + i * cols + j];
                }
            }
            offset += rows * cols;
            for (b, d) in layer.biases.iter_mut().zip(&direction[offset..]) {
                *b += scale * d;
            }
            offset += layer.biases.len();
        }
        Ok(())
    }
}

/// Layer input/output dimensions implied by the architecture: the input
/// dimension, the hidden widths, and a scalar output.
fn layer_dims(cfg: &ArchitectureConfig, widths: &[usize]) -> Result<Vec<usize>, NetworkError> {
    if widths.len() != cfg.depth - 1 {
        return Err(NetworkError::BadWidthCount {
            expected: cfg.depth - 1,
            got: widths.len(),
            depth: cfg.depth,
        });
    }
    if let Some(index) = widths.iter().position(|&w| w == 0) {
        return Err(NetworkError::ZeroWidth { index });
    }
    let mut dims = Vec::with_capacity(cfg.depth + 1);
    dims.push(cfg.n0);
    dims.extend_from_slice(widths);
    dims.push(1);
    Ok(dims)
}

/// Draws an initial parameter stack.
///
/// Weights are independent normals with standard deviation `rho_w` and
/// biases with `rho_b`. Under the square-root first-layer convention the
/// first layer draws are rescaled (weights by the fourth root of the input
/// dimension, biases by 1/sqrt(beta) when beta is positive) so that the
/// wide-network covariance matches that convention's first-layer kernel
/// while the forward pass stays unchanged.
pub fn init_params(
    cfg: &ArchitectureConfig,
    widths: &[usize],
    sampler: &mut SeededSampler,
) -> Result<NetworkParams, NetworkError> {
    let dims = layer_dims(cfg, widths)?;
    let mut layers = Vec::with_capacity(cfg.depth);
    for ell in 0..cfg.depth {
        let (fan_in, fan_out) = (dims[ell], dims[ell + 1]);
        let (mut w_std, mut b_std) = (cfg.rho_w, cfg.rho_b);
        if ell == 0 && cfg.layer1_convention == Layer1Convention::SqrtScaled {
            w_std *= (cfg.n0 as f64).powf(0.25);
            if cfg.beta > 0.0 {
                b_std /= cfg.beta.sqrt();
            }
        }
        let weights =
            Mat::from_fn(fan_out, fan_in, |_, _| w_std * sampler.next_normal());
        let biases = (0..fan_out).map(|_| b_std * sampler.next_normal()).collect();
        layers.push(LayerParams { weights, biases });
    }
    Ok(NetworkParams { layers })
}

/// Everything the forward pass produces: preactivations of every layer and
/// the scalar output (the last preactivation, unactivated).
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// Preactivation vectors for layers 1..=depth.
    pub preactivations: Vec<Vec<f64>>,
    /// Activated vectors for layers 1..=depth-1.
    pub hidden: Vec<Vec<f64>>,
    pub output: f64,
}

fn affine(layer: &LayerParams, input: &[f64], beta: f64) -> Vec<f64> {
    let scale = 1.0 / (input.len() as f64).sqrt();
    let mut z = layer.weights.mul_vec(input);
    for (zi, bi) in z.iter_mut().zip(&layer.biases) {
        *zi = *zi * scale + beta * bi;
    }
    z
}

/// Runs the network on one input and keeps the intermediate vectors.
pub fn forward(
    params: &NetworkParams,
    x: &[f64],
    spec: &ActivationSpec,
    cfg: &ArchitectureConfig,
) -> Result<ForwardTrace, NetworkError> {
    if x.len() != cfg.n0 {
        return Err(NetworkError::InputDimension { expected: cfg.n0, got: x.len() });
    }
    if params.layers.len() != cfg.depth {
        return Err(NetworkError::ShapeMismatch(format!(
            "{} layers for depth {}",
            params.layers.len(),
            cfg.depth
        )));
    }
    let mut preactivations = Vec::with_capacity(cfg.depth);
    let mut hidden = Vec::with_capacity(cfg.depth - 1);
    let mut current = x.to_vec();
    for (ell, layer) in params.layers.iter().enumerate() {
        if layer.weights.cols() != current.len() {
            return Err(NetworkError::ShapeMismatch(format!(
                "layer {} expects fan-in {}, got {}",
                ell,
                layer.weights.cols(),
                current.len()
            )));
        }
        let z = affine(layer, &current, cfg.beta);
        if ell + 1 < cfg.depth {
            current = z.iter().map(|&v| spec.eval(v)).collect();
            hidden.push(current.clone());
        } else {
            if z.len() != 1 {
                return Err(NetworkError::ShapeMismatch(format!(
                    "output layer has width {}, expected 1",
                    z.len()
                )));
            }
            current = z.clone();
        }
        preactivations.push(z);
    }
    Ok(ForwardTrace { preactivations, hidden, output: current[0] })
}

/// Gradient of the scalar output with respect to every parameter, in
/// flatten order, computed by reverse accumulation through the trace.
pub fn jacobian(
    params: &NetworkParams,
    x: &[f64],
    spec: &ActivationSpec,
    cfg: &ArchitectureConfig,
) -> Result<Vec<f64>, NetworkError> {
    let trace = forward(params, x, spec, cfg)?;
    Ok(jacobian_from_trace(params, x, &trace, spec, cfg))
}

fn jacobian_from_trace(
    params: &NetworkParams,
    x: &[f64],
    trace: &ForwardTrace,
    spec: &ActivationSpec,
    cfg: &ArchitectureConfig,
) -> Vec<f64> {
    let depth = cfg.depth;
    // delta[ell] = d output / d preactivation of layer ell+1
    let mut deltas: Vec<Vec<f64>> = vec![Vec::new(); depth];
    deltas[depth - 1] = vec![1.0];
    for ell in (0..depth - 1).rev() {
        let layer_above = &params.layers[ell + 1];
        let fan_in = layer_above.weights.cols();
        let scale = 1.0 / (fan_in as f64).sqrt();
        let upper = &deltas[ell + 1];
        let mut delta = vec![0.0; fan_in];
        for i in 0..layer_above.weights.rows() {
            let di = upper[i];
            if di == 0.0 {
                continue;
            }
            for (j, d) in delta.iter_mut().enumerate() {
                *d += di * layer_above.weights[(i, j)] * scale;
            }
        }
        for (d, &z) in delta.iter_mut().zip(&trace.preactivations[ell]) {
            *d *= spec.eval_derivative(z);
        }
        deltas[ell] = delta;
    }

    let mut grad = Vec::with_capacity(params.parameter_count());
    for (ell, layer) in params.layers.iter().enumerate() {
        let input: &[f64] = if ell == 0 { x } else { &trace.hidden[ell - 1] };
        let scale = 1.0 / (input.len() as f64).sqrt();
        let delta = &deltas[ell];
        for &di in delta.iter().take(layer.weights.rows()) {
            for &aj in input {
                grad.push(di * aj * scale);
            }
        }
        for &di in delta {
            grad.push(di * cfg.beta);
        }
    }
    grad
}

/// Gram matrix of output gradients over the training inputs.
pub fn empirical_ntk(
    params: &NetworkParams,
    training: &TrainingSet,
    spec: &ActivationSpec,
    cfg: &ArchitectureConfig,
) -> Result<Mat, NetworkError> {
    let jacobians: Vec<Vec<f64>> = training
        .inputs()
        .par_iter()
        .map(|x| jacobian(params, x, spec, cfg))
        .collect::<Result<_, _>>()?;
    let n = jacobians.len();
    let mut gram = Mat::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = crate::linalg::dot(&jacobians[i], &jacobians[j]);
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    Ok(gram)
}

/// Squared-error loss 0.5 * sum (f(x_i) - y_i)^2 and its parameter
/// gradient, accumulated input by input.
pub fn loss_and_gradient(
    params: &NetworkParams,
    training: &TrainingSet,
    targets: &[f64],
    spec: &ActivationSpec,
    cfg: &ArchitectureConfig,
) -> Result<(f64, Vec<f64>), NetworkError> {
    if targets.len() != training.len() {
        return Err(NetworkError::ShapeMismatch(format!(
            "{} targets for {} inputs",
            targets.len(),
            training.len()
        )));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.parameter_count()];
    for (x, &y) in training.inputs().iter().zip(targets) {
        let trace = forward(params, x, spec, cfg)?;
        let residual = trace.output - y;
        loss += 0.5 * residual * residual;
        let j = jacobian_from_trace(params, x, &trace, spec, cfg);
        for (g, ji) in grad.iter_mut().zip(&j) {
            *g += residual * ji;
        }
    }
    Ok((loss, grad))
}

/// Outputs of the network on every training input.
pub fn outputs(
    params: &NetworkParams,
    training: &TrainingSet,
    spec: &ActivationSpec,
    cfg: &ArchitectureConfig,
) -> Result<Vec<f64>, NetworkError> {
    training
        .inputs()
        .iter()
        .map(|x| forward(params, x, spec, cfg).map(|t| t.output))
        .collect()
}

/// Tangent kernel of a single hidden unit, written directly from the
/// parameter gradients of `w1 * activation(w0 * x + b0)`:
/// the contribution `(x y + 1)` from the inner weight and bias, times the
/// outer weight squared and both derivative factors, plus the product of
/// the two hidden activations from the outer-weight gradient.
pub fn perceptron_kernel(
    w0: f64,
    b0: f64,
    w1: f64,
    x: f64,
    y: f64,
    spec: &ActivationSpec,
) -> f64 {
    let (zx, zy) = (w0 * x + b0, w0 * y + b0);
    (x * y + 1.0) * w1 * w1 * spec.eval_derivative(zx) * spec.eval_derivative(zy)
        + spec.eval(zx) * spec.eval(zy)
}

/// Monte Carlo estimate of the width-limit tangent kernel.
#[derive(Clone, Debug)]
pub struct MonteCarloNtk {
    /// Entrywise mean of the empirical tangent kernels.
    pub mean: Mat,
    /// Entrywise standard error of the mean; infinite when only one sample
    /// was drawn.
    pub stderr: Mat,
    pub n_samples: usize,
}

/// Averages the empirical tangent kernel over independent initializations.
///
/// Sample k draws its parameters from the stream `base + 1 + k` of the
/// given sampler, so estimates are reproducible and independent of thread
/// scheduling.
pub fn monte_carlo_ntk(
    cfg: &ArchitectureConfig,
    widths: &[usize],
    training: &TrainingSet,
    spec: &ActivationSpec,
    n_samples: usize,
    sampler: &SeededSampler,
) -> Result<MonteCarloNtk, NetworkError> {
    if n_samples == 0 {
        return Err(NetworkError::NoSamples(0));
    }
    layer_dims(cfg, widths)?;
    let grams: Vec<Mat> = (0..n_samples)
        .into_par_iter()
        .map(|k| {
            let mut local = sampler.fork(sampler.stream_id().wrapping_add(1 + k as u64));
            let params = init_params(cfg, widths, &mut local)?;
            empirical_ntk(&params, training, spec, cfg)
        })
        .collect::<Result<_, _>>()?;
    let n = training.len();
    let samples = n_samples as f64;
    let mut mean = Mat::zeros(n, n);
    for g in &grams {
        for i in 0..n {
            for j in 0..n {
                mean[(i, j)] += g[(i, j)] / samples;
            }
        }
    }
    let mut stderr = Mat::zeros(n, n);
    if n_samples == 1 {
        for i in 0..n {
            for j in 0..n {
                stderr[(i, j)] = f64::INFINITY;
            }
        }
    } else {
        for g in &grams {
            for i in 0..n {
                for j in 0..n {
                    let d = g[(i, j)] - mean[(i, j)];
                    stderr[(i, j)] += d * d;
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                stderr[(i, j)] = (stderr[(i, j)] / (samples * (samples - 1.0))).sqrt();
            }
        }
    }
    Ok(MonteCarloNtk { mean, stderr, n_samples })
}
