//! Maps library errors onto the two failure classes the process reports:
//! validation problems (bad flags, files, or configurations, exit 1) and
//! numerical failures discovered mid-computation (exit 2).

use ntk_core::dynamics::DynamicsError;
use ntk_core::findiff::FindiffError;
use ntk_core::kernels::KernelError;
use ntk_core::network::NetworkError;
use ntk_core::spectra::SpectraError;

use crate::CliError;

pub fn kernel_error(e: KernelError) -> CliError {
    match e {
        KernelError::Expectation { .. } => CliError::Numerical(e.to_string()),
        _ => CliError::Validation(e.to_string()),
    }
}

pub fn network_error(e: NetworkError) -> CliError {
    CliError::Validation(e.to_string())
}

pub fn spectra_error(e: SpectraError) -> CliError {
    match e {
        SpectraError::BadTolerance(_) => CliError::Validation(e.to_string()),
        SpectraError::Kernel(k) => kernel_error(k),
        SpectraError::Asymmetric { .. } | SpectraError::Linalg(_) => {
            CliError::Numerical(e.to_string())
        }
    }
}

pub fn dynamics_error(e: DynamicsError) -> CliError {
    match e {
        DynamicsError::BadTime(_)
        | DynamicsError::BadLearningRate(_)
        | DynamicsError::DimensionMismatch(_) => CliError::Validation(e.to_string()),
        DynamicsError::Kernel(k) => kernel_error(k),
        DynamicsError::Network(n) => network_error(n),
        DynamicsError::Spectra(s) => spectra_error(s),
        DynamicsError::AsymmetricKernel { .. }
        | DynamicsError::Diverged { .. }
        | DynamicsError::Linalg(_) => CliError::Numerical(e.to_string()),
    }
}

pub fn findiff_error(e: FindiffError) -> CliError {
    CliError::Validation(e.to_string())
}
