//! Training dynamics: closed-form linearized flow under a fixed kernel and
//! full-batch gradient descent on the squared error, plus the comparison
//! between the two that makes the wide-network story quantitative.

use crate::activations::ActivationSpec;
use crate::gauss::{QuadratureRule, SeededSampler};
use crate::kernels::{self, ArchitectureConfig, KernelError, TrainingSet};
use crate::linalg::{self, LinalgError, Mat};
use crate::network::{self, NetworkError};
use crate::spectra::{self, SpectraError};
use thiserror::Error;

/// Errors from flow evaluation and training.
#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("kernel matrix is asymmetric: defect {defect:.3e} exceeds {tol:.3e}")]
    AsymmetricKernel { defect: f64, tol: f64 },
    #[error("flow times must be finite and nonnegative, got {0}")]
    BadTime(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(
        "loss reached {loss:.3e} at step {step}; the step size exceeds the stable range, \
         use at most the reciprocal of twice the largest kernel eigenvalue"
    )]
    Diverged { step: usize, loss: f64 },
    #[error("learning rate must be finite and positive, got {0}")]
    BadLearningRate(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Snapshot of the linearized flow at one time.
#[derive(Clone, Debug)]
pub struct FlowState {
    pub t: f64,
    pub outputs: Vec<f64>,
    /// Squared-error loss 0.5 * sum (outputs - targets)^2.
    pub loss: f64,
}

fn half_squared_error(outputs: &[f64], targets: &[f64]) -> f64 {
    outputs
        .iter()
        .zip(targets)
        .map(|(&f, &y)| 0.5 * (f - y) * (f - y))
        .sum()
}

/// Evaluates the kernel gradient flow of the squared error in closed form.
///
/// Under a fixed kernel the residual evolves linearly, so the outputs at
/// time t are the targets plus the initial residual propagated through the
/// matrix exponential of -t times the kernel, computed here by
/// eigendecomposition. Times must be finite and nonnegative; the kernel
/// must be symmetric.
pub fn linearized_flow(
    theta: &Mat,
    initial_outputs: &[f64],
    targets: &[f64],
    times: &[f64],
) -> Result<Vec<FlowState>, DynamicsError> {
    let n = theta.rows();
    if initial_outputs.len() != n || targets.len() != n {
        return Err(DynamicsError::DimensionMismatch(format!(
            "kernel is {}x{}, outputs {}, targets {}",
            n,
            theta.cols(),
            initial_outputs.len(),
            targets.len()
        )));
    }
    let defect = theta.symmetry_defect();
    let tol = 1e-12 * theta.max_abs().max(1e-300);
    if defect > tol {
        return Err(DynamicsError::AsymmetricKernel { defect, tol });
    }
    for &t in times {
        if !t.is_finite() || t < 0.0 {
            return Err(DynamicsError::BadTime(t));
        }
    }
    let eig = linalg::symmetric_eigen(theta)?;
    let residual: Vec<f64> = initial_outputs.iter().zip(targets).map(|(&f, &y)| f - y).collect();
    // residual coordinates in the eigenbasis
    let coords: Vec<f64> = (0..n)
        .map(|k| (0..n).map(|i| eig.vectors[(i, k)] * residual[i]).sum())
        .collect();
    let mut states = Vec::with_capacity(times.len());
    for &t in times {
        // exact at the start, avoiding eigenbasis round-trip noise
        let outputs = if t == 0.0 {
            initial_outputs.to_vec()
        } else {
            let mut outputs = targets.to_vec();
            for k in 0..n {
                let decay = (-eig.values[k] * t).exp() * coords[k];
                for (i, out) in outputs.iter_mut().enumerate() {
                    *out += eig.vectors[(i, k)] * decay;
                }
            }
            outputs
        };
        let loss = half_squared_error(&outputs, targets);
        states.push(FlowState { t, outputs, loss });
    }
    Ok(states)
}

/// Largest violation over the given times of the exponential decay bound:
/// loss(t) minus exp(-2 lambda_min t) times the initial loss. Negative
/// when the bound holds with room to spare.
pub fn loss_bound_check(
    theta: &Mat,
    initial_outputs: &[f64],
    targets: &[f64],
    times: &[f64],
) -> Result<f64, DynamicsError> {
    let (lambda_min, _) = spectra::min_max_eigenvalues(theta)?;
    let states = linearized_flow(theta, initial_outputs, targets, times)?;
    let loss0 = half_squared_error(initial_outputs, targets);
    let mut worst = f64::NEG_INFINITY;
    for s in &states {
        worst = worst.max(s.loss - (-2.0 * lambda_min * s.t).exp() * loss0);
    }
    Ok(worst)
}

/// Step-size policy for gradient descent.
#[derive(Clone, Copy, Debug)]
pub enum LearningRate {
    /// Reciprocal of twice the largest eigenvalue of the empirical tangent
    /// kernel at initialization.
    Auto,
    Fixed(f64),
}

/// Full-batch gradient descent configuration.
#[derive(Clone, Debug)]
pub struct GdConfig {
    pub steps: usize,
    pub learning_rate: LearningRate,
}

/// Loss trajectory of a finished run, including the resolved step size.
#[derive(Clone, Debug)]
pub struct GdTrainResult {
    /// Loss before any update, then after each step: length steps + 1.
    pub losses: Vec<f64>,
    pub learning_rate: f64,
}

/// Trains the network in place by forward-Euler steps on the squared
/// error. Aborts with a diagnostic when the loss passes 1e12.
pub fn gd_train(
    params: &mut network::NetworkParams,
    training: &TrainingSet,
    targets: &[f64],
    spec: &ActivationSpec,
    cfg: &ArchitectureConfig,
    gd: &GdConfig,
) -> Result<GdTrainResult, DynamicsError> {
    let learning_rate = match gd.learning_rate {
        LearningRate::Fixed(lr) => {
            if !lr.is_finite() || lr <= 0.0 {
                return Err(DynamicsError::BadLearningRate(lr));
            }
            lr
        }
        LearningRate::Auto => {
            let gram = network::empirical_ntk(params, training, spec, cfg)?;
            let (_, lambda_max) = spectra::min_max_eigenvalues(&gram)?;
            if lambda_max <= 0.0 {
                return Err(DynamicsError::BadLearningRate(lambda_max));
            }
            1.0 / (2.0 * lambda_max)
        }
    };
    let mut losses = Vec::with_capacity(gd.steps + 1);
    for step in 0..=gd.steps {
        let (loss, grad) = network::loss_and_gradient(params, training, targets, spec, cfg)?;
        losses.push(loss);
        if !loss.is_finite() || loss > 1e12 {
            return Err(DynamicsError::Diverged { step, loss });
        }
        if step < gd.steps {
            params.add_scaled(&grad, -learning_rate)?;
        }
    }
    Ok(GdTrainResult { losses, learning_rate })
}

/// Deviation between a trained network's outputs and the limiting kernel
/// flow, per width.
#[derive(Clone, Debug)]
pub struct TrajectoryDeviation {
    pub width: usize,
    /// Largest output gap over the requested times and training inputs.
    pub deviation: f64,
}

/// Trains one network per hidden width and measures how far its outputs
/// stray from the limiting-kernel flow started at the same initial
/// outputs, at each requested time.
///
/// Descent runs at a tenth of the stable step size so its own
/// discretization error stays far below the finite-width effect being
/// measured; requested times are snapped to the step grid and the flow is
/// evaluated at the snapped times, so a time of zero always reports zero
/// deviation.
pub fn trajectory_compare(
    widths: &[usize],
    training: &TrainingSet,
    targets: &[f64],
    spec: &ActivationSpec,
    cfg: &ArchitectureConfig,
    rule: &QuadratureRule,
    times: &[f64],
    sampler: &SeededSampler,
) -> Result<Vec<TrajectoryDeviation>, DynamicsError> {
    if targets.len() != training.len() {
        return Err(DynamicsError::DimensionMismatch(format!(
            "{} targets for {} inputs",
            targets.len(),
            training.len()
        )));
    }
    if times.is_empty() {
        return Err(DynamicsError::DimensionMismatch("empty time grid".into()));
    }
    for &t in times {
        if !t.is_finite() || t < 0.0 {
            return Err(DynamicsError::BadTime(t));
        }
    }
    let thetas = kernels::theta_recursion(training, spec, cfg, rule, cfg.depth)?;
    let theta = &thetas[cfg.depth - 1].values;
    let (_, lambda_max) = spectra::min_max_eigenvalues(theta)?;
    if lambda_max <= 0.0 {
        return Err(DynamicsError::BadLearningRate(lambda_max));
    }
    let eta = 0.1 / (2.0 * lambda_max);
    let snap_steps: Vec<usize> = times.iter().map(|&t| (t / eta).round() as usize).collect();
    let snapped_times: Vec<f64> = snap_steps.iter().map(|&k| k as f64 * eta).collect();
    let total_steps = snap_steps.iter().copied().max().unwrap_or(0);

    let mut out = Vec::with_capacity(widths.len());
    for (i, &width) in widths.iter().enumerate() {
        let mut local = sampler.fork(sampler.stream_id().wrapping_add(1 + i as u64));
        let hidden = vec![width; cfg.depth - 1];
        let mut params = network::init_params(cfg, &hidden, &mut local)?;
        let f0 = network::outputs(&params, training, spec, cfg)?;
        let flow = linearized_flow(theta, &f0, targets, &snapped_times)?;
        let mut deviation = 0.0f64;
        let mut record = |step: usize, params: &network::NetworkParams| -> Result<(), DynamicsError> {
            for (slot, &k) in snap_steps.iter().enumerate() {
                if k == step {
                    let outs = network::outputs(params, training, spec, cfg)?;
                    for (a, b) in outs.iter().zip(&flow[slot].outputs) {
                        deviation = deviation.max((a - b).abs());
                    }
                }
            }
            Ok(())
        };
        record(0, &params)?;
        for step in 1..=total_steps {
            let (loss, grad) =
                network::loss_and_gradient(&params, training, targets, spec, cfg)?;
            if !loss.is_finite() || loss > 1e12 {
                return Err(DynamicsError::Diverged { step, loss });
            }
            params.add_scaled(&grad, -eta)?;
            record(step, &params)?;
        }
        out.push(TrajectoryDeviation { width, deviation });
    }
    Ok(out)
}
