//! Run configuration: a strict JSON document naming the architecture, the
//! activation, the quadrature order, the seed, and any tolerance overrides.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use ntk_core::activations::ActivationSpec;
use ntk_core::gauss::{QuadratureRule, DEFAULT_QUADRATURE_ORDER};
use ntk_core::kernels::{ArchitectureConfig, Layer1Convention};

use crate::{emit, CliError};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArchitecture {
    n0: usize,
    depth: usize,
    beta: f64,
    #[serde(default = "one")]
    rho_w: f64,
    #[serde(default = "one")]
    rho_b: f64,
    #[serde(default = "standard")]
    layer1_convention: String,
}

fn one() -> f64 {
    1.0
}

fn standard() -> String {
    "standard".into()
}

fn default_quad_order() -> usize {
    DEFAULT_QUADRATURE_ORDER
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    architecture: RawArchitecture,
    activation: String,
    #[serde(default = "default_quad_order")]
    quad_order: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    tolerances: BTreeMap<String, f64>,
}

/// Validated configuration with the quadrature rule already built.
pub struct RunConfig {
    pub architecture: ArchitectureConfig,
    pub activation: ActivationSpec,
    pub rule: QuadratureRule,
    pub quad_order: usize,
    pub seed: u64,
    pub tolerances: BTreeMap<String, f64>,
}

impl RunConfig {
    /// Tolerance override by name, when the config carries one.
    pub fn tolerance(&self, name: &str) -> Option<f64> {
        self.tolerances.get(name).copied()
    }
}

/// Loads and validates a config file. Unknown keys, unknown activation
/// names, and architecture violations are all reported with the file path.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = emit::read_text(path)?;
    let raw: RawConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
    let convention = Layer1Convention::parse(&raw.architecture.layer1_convention)
        .ok_or_else(|| {
            CliError::Validation(format!(
                "config {}: layer1_convention must be \"standard\" or \"sqrt_scaled\", got {:?}",
                path.display(),
                raw.architecture.layer1_convention
            ))
        })?;
    let architecture = ArchitectureConfig::new(
        raw.architecture.n0,
        raw.architecture.depth,
        raw.architecture.beta,
        raw.architecture.rho_w,
        raw.architecture.rho_b,
        convention,
    )
    .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
    let activation = ActivationSpec::parse(&raw.activation)
        .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
    let rule = QuadratureRule::gauss_hermite(raw.quad_order)
        .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
    for (name, value) in &raw.tolerances {
        if !value.is_finite() || *value < 0.0 {
            return Err(CliError::Validation(format!(
                "config {}: tolerance {name:?} must be finite and nonnegative, got {value}",
                path.display()
            )));
        }
    }
    Ok(RunConfig {
        architecture,
        activation,
        rule,
        quad_order: raw.quad_order,
        seed: raw.seed,
        tolerances: raw.tolerances,
    })
}
