//! Layerwise kernel recursion for fully connected networks.
//!
//! For a depth-L network the recursion tracks four families of N x N
//! matrices over the training inputs:
//!
//! - `sigma_hat`, the preactivation covariance actually induced by the
//!   initialization variances, which seeds every Gaussian expectation;
//! - `sigma`, the normalized covariance E[sigma(u) sigma(v)] + beta^2 that
//!   feeds the tangent kernel;
//! - `sigma_dot`, the derivative covariance rho_w^2 E[sigma'(u) sigma'(v)];
//! - `theta`, the tangent kernel itself: theta^1 = x.y / n0 + beta^2 and
//!   theta^(l+1) = theta^l o sigma_dot^(l+1) + sigma^(l+1) entrywise.
//!
//! Expectations are taken over the bivariate marginals of the previous
//! `sigma_hat`. Relu and identity activations use their closed forms; every
//! other activation goes through panel quadrature. A stack never mixes the
//! two evaluation styles, and the tests check them against each other.

use crate::activations::{ActivationKind, ActivationSpec};
use crate::gauss::{
    self, ActivationDerivative, ActivationValue, Cov2, GaussError, QuadratureRule,
};
use crate::linalg::Mat;
use rayon::prelude::*;
use thiserror::Error;

/// Errors from architecture validation and kernel assembly.
#[derive(Debug, Error)]
pub enum KernelError {
    #[error("invalid architecture: {0}")]
    BadArchitecture(String),
    #[error("training set must contain at least one input")]
    EmptyTrainingSet,
    #[error("input {index} has dimension {got}, expected {expected}")]
    DimensionMismatch { index: usize, got: usize, expected: usize },
    #[error("input {index} contains a non-finite entry")]
    NonFiniteInput { index: usize },
    #[error("expectation for entry ({row}, {col}) failed: {source}")]
    Expectation { row: usize, col: usize, source: GaussError },
}

/// How the first layer consumes the raw inputs.
///
/// `Standard` scales the input gram by 1/n0 and the bias by beta^2;
/// `SqrtScaled` scales the gram by 1/sqrt(n0) and the bias linearly in beta.
/// Only the first-layer preactivation covariance differs; the tangent kernel
/// recursion itself is identical.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer1Convention {
    Standard,
    SqrtScaled,
}

impl Layer1Convention {
    /// Parses the configuration string: `standard` or `sqrt_scaled`.
    pub fn parse(text: &str) -> Option<Self> {
        match text.trim() {
            "standard" => Some(Layer1Convention::Standard),
            "sqrt_scaled" => Some(Layer1Convention::SqrtScaled),
            _ => None,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Layer1Convention::Standard => "standard",
            Layer1Convention::SqrtScaled => "sqrt_scaled",
        }
    }
}

/// Width-independent description of the network family.
#[derive(Clone, Debug)]
pub struct ArchitectureConfig {
    /// Input dimension, at least 1.
    pub n0: usize,
    /// Number of layers, at least 1; layer L produces the scalar output.
    pub depth: usize,
    /// Bias multiplier, nonnegative.
    pub beta: f64,
    /// Weight initialization standard deviation, positive.
    pub rho_w: f64,
    /// Bias initialization standard deviation, positive.
    pub rho_b: f64,
    pub layer1_convention: Layer1Convention,
}

impl ArchitectureConfig {
    pub fn new(
        n0: usize,
        depth: usize,
        beta: f64,
        rho_w: f64,
        rho_b: f64,
        layer1_convention: Layer1Convention,
    ) -> Result<Self, KernelError> {
        let cfg = ArchitectureConfig { n0, depth, beta, rho_w, rho_b, layer1_convention };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every field against its admissible range.
    pub fn validate(&self) -> Result<(), KernelError> {
        if self.n0 == 0 {
            return Err(KernelError::BadArchitecture("n0 must be at least 1".into()));
        }
        if self.depth == 0 {
            return Err(KernelError::BadArchitecture("depth must be at least 1".into()));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(KernelError::BadArchitecture(format!(
                "beta must be finite and nonnegative, got {}",
                self.beta
            )));
        }
        for (name, v) in [("rho_w", self.rho_w), ("rho_b", self.rho_b)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(KernelError::BadArchitecture(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Validated collection of training inputs of a common dimension.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    inputs: Vec<Vec<f64>>,
    dim: usize,
}

impl TrainingSet {
    /// Validates dimensions and finiteness. Repeated rows are accepted; they
    /// make kernel matrices singular, so [`TrainingSet::repeated_pairs`]
    /// exposes them for diagnostics.
    pub fn new(inputs: Vec<Vec<f64>>) -> Result<Self, KernelError> {
        if inputs.is_empty() {
            return Err(KernelError::EmptyTrainingSet);
        }
        let dim = inputs[0].len();
        if dim == 0 {
            return Err(KernelError::DimensionMismatch { index: 0, got: 0, expected: 1 });
        }
        for (index, x) in inputs.iter().enumerate() {
            if x.len() != dim {
                return Err(KernelError::DimensionMismatch {
                    index,
                    got: x.len(),
                    expected: dim,
                });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(KernelError::NonFiniteInput { index });
            }
        }
        Ok(TrainingSet { inputs, dim })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i]
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    /// Euclidean gram matrix x_i . x_j.
    pub fn gram(&self) -> Mat {
        let n = self.len();
        Mat::from_fn(n, n, |i, j| crate::linalg::dot(&self.inputs[i], &self.inputs[j]))
    }

    /// Index pairs whose rows are bitwise identical.
    pub fn repeated_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for i in 0..self.len() {
            for j in (i + 1)..self.len() {
                if self.inputs[i] == self.inputs[j] {
                    pairs.push((i, j));
                }
            }
        }
        pairs
    }

    /// Index pairs whose inputs lie on a common line through the origin,
    /// within a relative cosine tolerance of 1e-12. The zero vector counts
    /// as proportional to everything.
    pub fn proportional_pairs(&self) -> Vec<(usize, usize)> {
        let norms: Vec<f64> =
            self.inputs.iter().map(|x| crate::linalg::dot(x, x).sqrt()).collect();
        let mut pairs = Vec::new();
        for i in 0..self.len() {
            for j in (i + 1)..self.len() {
                if norms[i] == 0.0 || norms[j] == 0.0 {
                    pairs.push((i, j));
                    continue;
                }
                let cos = crate::linalg::dot(&self.inputs[i], &self.inputs[j])
                    / (norms[i] * norms[j]);
                if cos.abs() >= 1.0 - 1e-12 {
                    pairs.push((i, j));
                }
            }
        }
        pairs
    }
}

/// Which kernel family a matrix belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    SigmaHat,
    Sigma,
    SigmaDot,
    Theta,
}

impl KernelKind {
    pub fn tag(&self) -> &'static str {
        match self {
            KernelKind::SigmaHat => "sigma_hat",
            KernelKind::Sigma => "sigma",
            KernelKind::SigmaDot => "sigma_dot",
            KernelKind::Theta => "theta",
        }
    }
}

/// One kernel matrix of the stack, tagged with its family and layer.
#[derive(Clone, Debug)]
pub struct KernelMatrix {
    pub values: Mat,
    pub kind: KernelKind,
    pub layer: usize,
}

/// All four kernel families through the requested depth: `sigma_hat` and
/// `theta` for layers 1..=depth, `sigma` and `sigma_dot` for layers
/// 2..=depth where the recursion defines them.
#[derive(Clone, Debug)]
pub struct KernelStack {
    pub sigma_hat: Vec<KernelMatrix>,
    pub sigma: Vec<KernelMatrix>,
    pub sigma_dot: Vec<KernelMatrix>,
    pub theta: Vec<KernelMatrix>,
}

/// How pair expectations over a layer are evaluated.
#[derive(Clone, Copy)]
enum PairRule<'a> {
    Quadrature(&'a ActivationSpec, &'a QuadratureRule),
    ReluClosed,
    IdentityClosed,
}

impl PairRule<'_> {
    fn select<'a>(
        spec: &'a ActivationSpec,
        rule: &'a QuadratureRule,
        allow_closed: bool,
    ) -> PairRule<'a> {
        if allow_closed {
            match spec.kind {
                ActivationKind::Relu => return PairRule::ReluClosed,
                ActivationKind::Identity => return PairRule::IdentityClosed,
                _ => {}
            }
        }
        PairRule::Quadrature(spec, rule)
    }

    /// E[sigma(u) sigma(v)] over the bivariate marginal.
    fn value_pair(&self, cov: &Cov2) -> Result<f64, GaussError> {
        match self {
            PairRule::Quadrature(spec, rule) => {
                let f = ActivationValue(spec);
                Ok(gauss::expectation_pair(cov, &f, &f, rule))
            }
            PairRule::ReluClosed => {
                if cov.a() == 0.0 || cov.b() == 0.0 {
                    return Ok(0.0);
                }
                gauss::relu_expectation_closed_form(cov)
            }
            PairRule::IdentityClosed => Ok(cov.c()),
        }
    }

    /// E[sigma'(u) sigma'(v)] over the bivariate marginal.
    fn derivative_pair(&self, cov: &Cov2) -> Result<f64, GaussError> {
        match self {
            PairRule::Quadrature(spec, rule) => {
                let f = ActivationDerivative(spec);
                Ok(gauss::expectation_pair(cov, &f, &f, rule))
            }
            PairRule::ReluClosed => {
                if cov.a() == 0.0 || cov.b() == 0.0 {
                    return Ok(0.0);
                }
                gauss::step_expectation_closed_form(cov)
            }
            PairRule::IdentityClosed => Ok(1.0),
        }
    }
}

/// Applies `entry` to the bivariate marginal of every upper-triangle pair of
/// `prev` in parallel and mirrors the result. Failures carry the offending
/// entry location.
fn pair_map<E>(prev: &Mat, entry: E) -> Result<Mat, KernelError>
where
    E: Fn(&Cov2) -> Result<f64, GaussError> + Sync,
{
    let n = prev.rows();
    let pairs: Vec<(usize, usize)> =
        (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let values: Result<Vec<f64>, KernelError> = pairs
        .par_iter()
        .map(|&(i, j)| {
            Cov2::new(prev[(i, i)], prev[(j, j)], prev[(i, j)])
                .and_then(|cov| entry(&cov))
                .map_err(|source| KernelError::Expectation { row: i, col: j, source })
        })
        .collect();
    let values = values?;
    let mut out = Mat::zeros(n, n);
    for (&(i, j), &v) in pairs.iter().zip(&values) {
        out[(i, j)] = v;
        out[(j, i)] = v;
    }
    Ok(out)
}

/// First-layer preactivation covariance under the configured convention.
pub fn sigma_hat_layer1(
    training: &TrainingSet,
    cfg: &ArchitectureConfig,
) -> Result<KernelMatrix, KernelError> {
    cfg.validate()?;
    check_dim(training, cfg)?;
    let gram = training.gram();
    let n = training.len();
    let rw2 = cfg.rho_w * cfg.rho_w;
    let rb2 = cfg.rho_b * cfg.rho_b;
    let values = match cfg.layer1_convention {
        Layer1Convention::Standard => {
            let scale = rw2 / cfg.n0 as f64;
            let bias = rb2 * cfg.beta * cfg.beta;
            Mat::from_fn(n, n, |i, j| scale * gram[(i, j)] + bias)
        }
        Layer1Convention::SqrtScaled => {
            let scale = rw2 / (cfg.n0 as f64).sqrt();
            let bias = rb2 * cfg.beta;
            Mat::from_fn(n, n, |i, j| scale * gram[(i, j)] + bias)
        }
    };
    Ok(KernelMatrix { values, kind: KernelKind::SigmaHat, layer: 1 })
}

/// Next-layer preactivation covariance:
/// rho_w^2 E[sigma(u) sigma(v)] + rho_b^2 beta^2.
pub fn sigma_hat_next(
    prev: &KernelMatrix,
    spec: &ActivationSpec,
    cfg: &ArchitectureConfig,
    rule: &QuadratureRule,
) -> Result<KernelMatrix, KernelError> {
    cfg.validate()?;
    let pr = PairRule::select(spec, rule, true);
    let rw2 = cfg.rho_w * cfg.rho_w;
    let bias = cfg.rho_b * cfg.rho_b * cfg.beta * cfg.beta;
    let values = pair_map(&prev.values, |cov| Ok(rw2 * pr.value_pair(cov)? + bias))?;
    Ok(KernelMatrix { values, kind: KernelKind::SigmaHat, layer: prev.layer + 1 })
}

/// Next-layer normalized covariance: E[sigma(u) sigma(v)] + beta^2, without
/// initialization variances.
pub fn sigma_next(
    prev: &KernelMatrix,
    spec: &ActivationSpec,
    cfg: &ArchitectureConfig,
    rule: &QuadratureRule,
) -> Result<KernelMatrix, KernelError> {
    cfg.validate()?;
    let pr = PairRule::select(spec, rule, true);
    let bias = cfg.beta * cfg.beta;
    let values = pair_map(&prev.values, |cov| Ok(pr.value_pair(cov)? + bias))?;
    Ok(KernelMatrix { values, kind: KernelKind::Sigma, layer: prev.layer + 1 })
}

/// Next-layer derivative covariance: rho_w^2 E[sigma'(u) sigma'(v)].
pub fn sigma_dot_next(
    prev: &KernelMatrix,
    spec: &ActivationSpec,
    cfg: &ArchitectureConfig,
    rule: &QuadratureRule,
) -> Result<KernelMatrix, KernelError> {
    cfg.validate()?;
    let pr = PairRule::select(spec, rule, true);
    let rw2 = cfg.rho_w * cfg.rho_w;
    let values = pair_map(&prev.values, |cov| Ok(rw2 * pr.derivative_pair(cov)?))?;
    Ok(KernelMatrix { values, kind: KernelKind::SigmaDot, layer: prev.layer + 1 })
}

fn check_dim(training: &TrainingSet, cfg: &ArchitectureConfig) -> Result<(), KernelError> {
    if training.dim() != cfg.n0 {
        return Err(KernelError::DimensionMismatch {
            index: 0,
            got: training.dim(),
            expected: cfg.n0,
        });
    }
    Ok(())
}

/// Computes all four kernel families through `depth` layers, using closed
/// forms for relu and identity and quadrature otherwise.
pub fn kernel_stack(
    training: &TrainingSet,
    spec: &ActivationSpec,
    cfg: &ArchitectureConfig,
    rule: &QuadratureRule,
    depth: usize,
) -> Result<KernelStack, KernelError> {
    kernel_stack_inner(training, spec, cfg, rule, depth, true)
}

/// Same as [`kernel_stack`] but forces quadrature even where a closed form
/// exists; the tests compare the two paths entry by entry.
pub fn kernel_stack_by_quadrature(
    training: &TrainingSet,
    spec: &ActivationSpec,
    cfg: &ArchitectureConfig,
    rule: &QuadratureRule,
    depth: usize,
) -> Result<KernelStack, KernelError> {
    kernel_stack_inner(training, spec, cfg, rule, depth, false)
}

fn kernel_stack_inner(
    training: &TrainingSet,
    spec: &ActivationSpec,
    cfg: &ArchitectureConfig,
    rule: &QuadratureRule,
    depth: usize,
    allow_closed: bool,
) -> Result<KernelStack, KernelError> {
    cfg.validate()?;
    check_dim(training, cfg)?;
    if depth == 0 {
        return Err(KernelError::BadArchitecture("depth must be at least 1".into()));
    }
    let n = training.len();
    let pr = PairRule::select(spec, rule, allow_closed);
    let rw2 = cfg.rho_w * cfg.rho_w;
    let rb2 = cfg.rho_b * cfg.rho_b;
    let beta2 = cfg.beta * cfg.beta;

    let first = sigma_hat_layer1(training, cfg)?;
    let gram = training.gram();
    let theta1 = Mat::from_fn(n, n, |i, j| gram[(i, j)] / cfg.n0 as f64 + beta2);

    let mut stack = KernelStack {
        sigma_hat: vec![first],
        sigma: Vec::new(),
        sigma_dot: Vec::new(),
        theta: vec![KernelMatrix { values: theta1, kind: KernelKind::Theta, layer: 1 }],
    };

    for layer in 2..=depth {
        let prev_hat = &stack.sigma_hat[layer - 2].values;
        let value_exp = pair_map(prev_hat, |cov| pr.value_pair(cov))?;
        let deriv_exp = pair_map(prev_hat, |cov| pr.derivative_pair(cov))?;

        let sigma = Mat::from_fn(n, n, |i, j| value_exp[(i, j)] + beta2);
        let sigma_dot = Mat::from_fn(n, n, |i, j| rw2 * deriv_exp[(i, j)]);
        let next_hat = Mat::from_fn(n, n, |i, j| rw2 * value_exp[(i, j)] + rb2 * beta2);
        let prev_theta = &stack.theta[layer - 2].values;
        let theta =
            Mat::from_fn(n, n, |i, j| prev_theta[(i, j)] * sigma_dot[(i, j)] + sigma[(i, j)]);

        stack.sigma.push(KernelMatrix { values: sigma, kind: KernelKind::Sigma, layer });
        stack
            .sigma_dot
            .push(KernelMatrix { values: sigma_dot, kind: KernelKind::SigmaDot, layer });
        stack
            .sigma_hat
            .push(KernelMatrix { values: next_hat, kind: KernelKind::SigmaHat, layer });
        stack.theta.push(KernelMatrix { values: theta, kind: KernelKind::Theta, layer });
    }
    Ok(stack)
}

/// Tangent kernels theta^1 through theta^depth.
pub fn theta_recursion(
    training: &TrainingSet,
    spec: &ActivationSpec,
    cfg: &ArchitectureConfig,
    rule: &QuadratureRule,
    depth: usize,
) -> Result<Vec<KernelMatrix>, KernelError> {
    Ok(kernel_stack(training, spec, cfg, rule, depth)?.theta)
}
