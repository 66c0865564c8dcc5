//! Neural tangent kernel laboratory for fully connected networks.
//!
//! The crate computes the infinite-width tangent kernel of a deep fully
//! connected network by the layer recursion over Gaussian expectations,
//! estimates the same kernel empirically from parameter gradients at finite
//! width, and provides the surrounding diagnostics:
//!
//! - `activations`: the admissible nonlinearities and their derivatives.
//! - `gauss`: quadrature rules, bivariate Gaussian expectations, and a
//!   counter-based deterministic sampler.
//! - `kernels`: the layerwise kernel recursion on a training set.
//! - `network`: finite-width initialization, forward pass, parameter
//!   Jacobians, and Monte Carlo kernel estimates.
//! - `spectra`: eigenvalue extraction and positivity verdicts.
//! - `dynamics`: linearized gradient flow and full-batch gradient descent.
//! - `findiff`: finite-difference probes used to certify when an activation
//!   behaves like a polynomial and when inputs are degenerate.
//!
//! Everything is deterministic: identical inputs, seeds, and thread counts
//! give bitwise identical results.

pub mod activations;
pub mod dynamics;
pub mod findiff;
pub mod gauss;
pub mod kernels;
pub mod linalg;
pub mod network;
pub mod spectra;
