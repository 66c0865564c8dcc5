//! Activation functions and their exact derivatives.
//!
//! Only globally Lipschitz scalar functions appear here; each one reports
//! where its derivative jumps (relu at the origin, nowhere else) so the
//! Gaussian quadrature can split integration panels there rather than
//! average across a kink.

use thiserror::Error;

const FRAC_2_SQRT_PI: f64 = 1.1283791670955126;
const FRAC_1_SQRT_2PI: f64 = 0.3989422804014327;
const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Errors from parsing activation descriptions.
#[derive(Debug, Error)]
pub enum ActivationError {
    #[error("unknown activation {0:?}, expected relu, tanh, erf, identity, gelu, or poly:c0,c1,...,cd")]
    Unknown(String),
    #[error("polynomial activation needs at least one coefficient")]
    EmptyPolynomial,
    #[error("coefficient {index} of polynomial activation is not a number: {text:?}")]
    BadCoefficient { index: usize, text: String },
}

/// The supported nonlinearities.
#[derive(Clone, Debug, PartialEq)]
pub enum ActivationKind {
    Relu,
    Tanh,
    Erf,
    Identity,
    /// Coefficients in ascending degree order, trailing zeros trimmed.
    Polynomial(Vec<f64>),
    Gelu,
}

/// A named activation with degree metadata.
///
/// `polynomial_degree` is populated exactly when the function is a
/// polynomial: the explicit polynomial kinds and the identity (degree 1).
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationSpec {
    pub name: String,
    pub kind: ActivationKind,
    pub polynomial_degree: Option<usize>,
}

impl ActivationSpec {
    pub fn relu() -> Self {
        ActivationSpec { name: "relu".into(), kind: ActivationKind::Relu, polynomial_degree: None }
    }

    pub fn tanh() -> Self {
        ActivationSpec { name: "tanh".into(), kind: ActivationKind::Tanh, polynomial_degree: None }
    }

    pub fn erf() -> Self {
        ActivationSpec { name: "erf".into(), kind: ActivationKind::Erf, polynomial_degree: None }
    }

    pub fn identity() -> Self {
        ActivationSpec {
            name: "identity".into(),
            kind: ActivationKind::Identity,
            polynomial_degree: Some(1),
        }
    }

    pub fn gelu() -> Self {
        ActivationSpec { name: "gelu".into(), kind: ActivationKind::Gelu, polynomial_degree: None }
    }

    /// Polynomial with coefficients in ascending degree order. Trailing
    /// zeros are trimmed so the recorded degree is the true degree; at least
    /// one coefficient is always kept.
    pub fn polynomial(mut coeffs: Vec<f64>) -> Result<Self, ActivationError> {
        if coeffs.is_empty() {
            return Err(ActivationError::EmptyPolynomial);
        }
        while coeffs.len() > 1 && coeffs[coeffs.len() - 1] == 0.0 {
            coeffs.pop();
        }
        let degree = coeffs.len() - 1;
        let name = format!(
            "poly:{}",
            coeffs.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
        );
        Ok(ActivationSpec {
            name,
            kind: ActivationKind::Polynomial(coeffs),
            polynomial_degree: Some(degree),
        })
    }

    /// Parses the command-line form: one of the fixed names or
    /// `poly:c0,c1,...,cd`.
    pub fn parse(text: &str) -> Result<Self, ActivationError> {
        let t = text.trim();
        match t {
            "relu" => return Ok(Self::relu()),
            "tanh" => return Ok(Self::tanh()),
            "erf" => return Ok(Self::erf()),
            "identity" => return Ok(Self::identity()),
            "gelu" => return Ok(Self::gelu()),
            _ => {}
        }
        if let Some(list) = t.strip_prefix("poly:") {
            if list.trim().is_empty() {
                return Err(ActivationError::EmptyPolynomial);
            }
            let mut coeffs = Vec::new();
            for (index, piece) in list.split(',').enumerate() {
                let c = piece.trim().parse::<f64>().map_err(|_| {
                    ActivationError::BadCoefficient { index, text: piece.trim().to_string() }
                })?;
                coeffs.push(c);
            }
            return Self::polynomial(coeffs);
        }
        Err(ActivationError::Unknown(t.to_string()))
    }

    /// Function value.
    pub fn eval(&self, x: f64) -> f64 {
        match &self.kind {
            ActivationKind::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Erf => libm::erf(x),
            ActivationKind::Identity => x,
            ActivationKind::Polynomial(coeffs) => horner(coeffs, x),
            ActivationKind::Gelu => x * 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2)),
        }
    }

    /// Derivative value. The relu derivative is defined as 0 at the origin.
    pub fn eval_derivative(&self, x: f64) -> f64 {
        match &self.kind {
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            ActivationKind::Erf => FRAC_2_SQRT_PI * (-x * x).exp(),
            ActivationKind::Identity => 1.0,
            ActivationKind::Polynomial(coeffs) => horner_derivative(coeffs, x),
            ActivationKind::Gelu => {
                0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
                    + x * FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
            }
        }
    }

    /// Points where the function or its derivative is not smooth.
    pub fn breakpoints(&self) -> &[f64] {
        match self.kind {
            ActivationKind::Relu => &[0.0],
            _ => &[],
        }
    }

    /// True when the derivative is continuous everywhere.
    pub fn is_smooth(&self) -> bool {
        self.breakpoints().is_empty()
    }
}

/// Horner evaluation of `coeffs[0] + coeffs[1] x + ...`.
fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Horner evaluation of the derivative, without materializing the derived
/// coefficient vector.
fn horner_derivative(coeffs: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for k in (1..coeffs.len()).rev() {
        acc = acc * x + (k as f64) * coeffs[k];
    }
    acc
}
