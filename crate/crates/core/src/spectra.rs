//! Eigenvalue extraction and positivity verdicts for kernel matrices.
//!
//! A verdict is always relative: a matrix is called strictly positive
//! definite when its smallest eigenvalue clears `relative_tol` times the
//! largest, indefinite when it falls below the negated threshold, and
//! positive semi-definite in the band between. `positivity_report` runs the
//! whole kernel stack through this classification and annotates, rather
//! than aborts on, input configurations that are expected to produce
//! singular kernels.

use crate::activations::ActivationSpec;
use crate::gauss::QuadratureRule;
use crate::kernels::{self, ArchitectureConfig, KernelError, KernelMatrix, TrainingSet};
use crate::linalg::{self, LinalgError, Mat};
use thiserror::Error;

/// Default relative eigenvalue tolerance for verdicts.
pub const DEFAULT_RELATIVE_TOL: f64 = 1e-8;

/// Errors from spectral analysis.
#[derive(Debug, Error)]
pub enum SpectraError {
    #[error("matrix is asymmetric: defect {defect:.3e} exceeds tolerance {tol:.3e}")]
    Asymmetric { defect: f64, tol: f64 },
    #[error("relative tolerance must be finite and nonnegative, got {0}")]
    BadTolerance(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Positivity classification of a symmetric matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    StrictlyPositiveDefinite,
    PositiveSemiDefinite,
    Indefinite,
}

impl Verdict {
    pub fn tag(&self) -> &'static str {
        match self {
            Verdict::StrictlyPositiveDefinite => "strictly_positive_definite",
            Verdict::PositiveSemiDefinite => "positive_semi_definite",
            Verdict::Indefinite => "indefinite",
        }
    }
}

/// Spectral summary of one symmetric matrix. `matrix_kind` carries the
/// kernel family tag when the matrix came from a stack and `"matrix"` for a
/// raw symmetric matrix; `layer` is 0 in the raw case.
#[derive(Clone, Debug)]
pub struct SpectralReport {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub verdict: Verdict,
    pub relative_tol: f64,
    pub matrix_kind: String,
    pub layer: usize,
}

/// Smallest and largest eigenvalue of a symmetric matrix.
///
/// Rejects matrices whose symmetry defect exceeds 1e-12 of the largest
/// entry instead of silently symmetrizing them.
pub fn min_max_eigenvalues(m: &Mat) -> Result<(f64, f64), SpectraError> {
    let defect = m.symmetry_defect();
    let tol = 1e-12 * m.max_abs().max(1e-300);
    if defect > tol {
        return Err(SpectraError::Asymmetric { defect, tol });
    }
    let eig = linalg::symmetric_eigen(m)?;
    Ok((eig.values[0], eig.values[eig.values.len() - 1]))
}

/// Applies the relative-threshold classification to an eigenvalue range.
pub fn classify(lambda_min: f64, lambda_max: f64, relative_tol: f64) -> Verdict {
    let scale = lambda_max.max(1e-300);
    if lambda_min > relative_tol * scale {
        Verdict::StrictlyPositiveDefinite
    } else if lambda_min >= -relative_tol * scale {
        Verdict::PositiveSemiDefinite
    } else {
        Verdict::Indefinite
    }
}

fn report_inner(
    m: &Mat,
    relative_tol: f64,
    matrix_kind: String,
    layer: usize,
) -> Result<SpectralReport, SpectraError> {
    if !relative_tol.is_finite() || relative_tol < 0.0 {
        return Err(SpectraError::BadTolerance(relative_tol));
    }
    let (lambda_min, lambda_max) = min_max_eigenvalues(m)?;
    Ok(SpectralReport {
        lambda_min,
        lambda_max,
        verdict: classify(lambda_min, lambda_max, relative_tol),
        relative_tol,
        matrix_kind,
        layer,
    })
}

/// Spectral verdict for a raw symmetric matrix.
pub fn spd_verdict(m: &Mat, relative_tol: f64) -> Result<SpectralReport, SpectraError> {
    report_inner(m, relative_tol, "matrix".to_string(), 0)
}

/// Spectral report for one tagged kernel matrix.
pub fn spectral_report(
    matrix: &KernelMatrix,
    relative_tol: f64,
) -> Result<SpectralReport, SpectraError> {
    report_inner(
        &matrix.values,
        relative_tol,
        matrix.kind.tag().to_string(),
        matrix.layer,
    )
}

/// Verdicts for the whole kernel stack plus hypothesis warnings.
#[derive(Clone, Debug)]
pub struct PositivityReport {
    /// Tangent kernels for layers 1..=depth, then preactivation covariances
    /// for layers 1..=depth, then normalized covariances for layers
    /// 2..=depth.
    pub reports: Vec<SpectralReport>,
    /// Human-readable notes about input configurations that are expected to
    /// break strict positivity. Never fatal.
    pub hypothesis_warnings: Vec<String>,
}

/// Classifies every kernel in the stack and annotates configurations that
/// are known to produce singular limits: repeated input rows always, and
/// proportional input pairs when the bias is zero.
pub fn positivity_report(
    training: &TrainingSet,
    spec: &ActivationSpec,
    cfg: &ArchitectureConfig,
    rule: &QuadratureRule,
    depth: usize,
    relative_tol: f64,
) -> Result<PositivityReport, SpectraError> {
    let stack = kernels::kernel_stack(training, spec, cfg, rule, depth)?;
    let mut reports = Vec::new();
    for km in stack.theta.iter().chain(&stack.sigma_hat).chain(&stack.sigma) {
        reports.push(spectral_report(km, relative_tol)?);
    }

    let mut hypothesis_warnings = Vec::new();
    let repeated = training.repeated_pairs();
    for &(i, j) in &repeated {
        hypothesis_warnings.push(format!(
            "inputs {i} and {j} are identical; every kernel matrix is singular on that pair"
        ));
    }
    if cfg.beta == 0.0 {
        for (i, j) in training.proportional_pairs() {
            if repeated.contains(&(i, j)) {
                continue;
            }
            hypothesis_warnings.push(format!(
                "inputs {i} and {j} are proportional; with beta = 0 the limiting kernels \
                 are singular on that pair"
            ));
        }
    }
    Ok(PositivityReport { reports, hypothesis_warnings })
}

/// Entrywise product of two equally sized matrices.
pub fn schur_product(a: &Mat, b: &Mat) -> Mat {
    assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()), "dimension mismatch");
    Mat::from_fn(a.rows(), a.cols(), |i, j| a[(i, j)] * b[(i, j)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::DEFAULT_QUADRATURE_ORDER;
    use crate::kernels::Layer1Convention;

    fn rule() -> QuadratureRule {
        QuadratureRule::gauss_hermite(DEFAULT_QUADRATURE_ORDER).unwrap()
    }

    fn lcg_stream(seed: u64, count: usize) -> Vec<f64> {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..count)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64) / ((1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn classification_respects_relative_thresholds() {
        assert_eq!(classify(2e-8, 1.0, 1e-8), Verdict::StrictlyPositiveDefinite);
        assert_eq!(classify(5e-9, 1.0, 1e-8), Verdict::PositiveSemiDefinite);
        assert_eq!(classify(-5e-9, 1.0, 1e-8), Verdict::PositiveSemiDefinite);
        assert_eq!(classify(-2e-8, 1.0, 1e-8), Verdict::Indefinite);
        // even a tiny negative eigenvalue is indefinite when the scale is tiny
        assert_eq!(classify(-1e-20, 1e-15, 1e-8), Verdict::Indefinite);
    }

    #[test]
    fn min_max_rejects_asymmetry_and_matches_bisection() {
        let skew = Mat::from_rows(&[vec![1.0, 0.3], vec![0.1, 1.0]]);
        assert!(matches!(
            min_max_eigenvalues(&skew),
            Err(SpectraError::Asymmetric { .. })
        ));

        for seed in 0..4u64 {
            let vals = lcg_stream(seed, 144);
            let raw = Mat::from_fn(12, 12, |i, j| vals[i * 12 + j]);
            let m = Mat::from_fn(12, 12, |i, j| 0.5 * (raw[(i, j)] + raw[(j, i)]));
            let (lo, hi) = min_max_eigenvalues(&m).unwrap();
            let (blo, bhi) = linalg::eigen_extremes_by_bisection(&m);
            let scale = m.max_abs().max(1.0);
            assert!((lo - blo).abs() < 1e-10 * scale);
            assert!((hi - bhi).abs() < 1e-10 * scale);
        }
    }

    #[test]
    fn distinct_inputs_give_strict_tangent_kernels() {
        let training = TrainingSet::new(vec![
            vec![1.0, 0.2],
            vec![-0.4, 0.9],
            vec![0.3, -1.1],
        ])
        .unwrap();
        let cfg =
            ArchitectureConfig::new(2, 3, 1.0, 1.0, 1.0, Layer1Convention::Standard).unwrap();
        let report = positivity_report(
            &training,
            &ActivationSpec::relu(),
            &cfg,
            &rule(),
            3,
            DEFAULT_RELATIVE_TOL,
        )
        .unwrap();
        assert!(report.hypothesis_warnings.is_empty());
        // theta layers 1..=3, sigma_hat 1..=3, sigma 2..=3
        assert_eq!(report.reports.len(), 8);
        for r in &report.reports {
            assert_eq!(
                r.verdict,
                Verdict::StrictlyPositiveDefinite,
                "{:?} layer {}: lambda_min {}",
                r.matrix_kind,
                r.layer,
                r.lambda_min
            );
        }
    }

    #[test]
    fn zero_beta_proportional_inputs_annotated_not_fatal() {
        let training =
            TrainingSet::new(vec![vec![0.5, -0.25], vec![1.0, -0.5], vec![0.3, 0.9]]).unwrap();
        let cfg =
            ArchitectureConfig::new(2, 2, 0.0, 1.0, 1.0, Layer1Convention::Standard).unwrap();
        let report = positivity_report(
            &training,
            &ActivationSpec::relu(),
            &cfg,
            &rule(),
            2,
            DEFAULT_RELATIVE_TOL,
        )
        .unwrap();
        assert_eq!(report.hypothesis_warnings.len(), 1);
        assert!(report.hypothesis_warnings[0].contains("proportional"));
        for r in &report.reports {
            assert_ne!(
                r.verdict,
                Verdict::StrictlyPositiveDefinite,
                "{:?} layer {} should be singular",
                r.matrix_kind,
                r.layer
            );
            assert_ne!(r.verdict, Verdict::Indefinite);
        }
    }

    #[test]
    fn repeated_inputs_annotated_and_kernels_degrade() {
        let training = TrainingSet::new(vec![
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
        ])
        .unwrap();
        let cfg =
            ArchitectureConfig::new(2, 2, 1.0, 1.0, 1.0, Layer1Convention::Standard).unwrap();
        let report = positivity_report(
            &training,
            &ActivationSpec::tanh(),
            &cfg,
            &rule(),
            2,
            DEFAULT_RELATIVE_TOL,
        )
        .unwrap();
        assert_eq!(report.hypothesis_warnings.len(), 1);
        assert!(report.hypothesis_warnings[0].contains("identical"));
        for r in &report.reports {
            assert_ne!(r.verdict, Verdict::StrictlyPositiveDefinite);
            assert_ne!(r.verdict, Verdict::Indefinite);
        }
    }

    #[test]
    fn raw_matrix_verdicts_match_textbook_cases() {
        let identity = spd_verdict(&Mat::identity(3), DEFAULT_RELATIVE_TOL).unwrap();
        assert_eq!(identity.verdict, Verdict::StrictlyPositiveDefinite);
        assert_eq!(identity.matrix_kind, "matrix");
        assert_eq!(identity.layer, 0);
        assert!((identity.lambda_min - 1.0).abs() < 1e-12);
        assert!((identity.lambda_max - 1.0).abs() < 1e-12);

        let ones = Mat::from_fn(4, 4, |_, _| 1.0);
        let r = spd_verdict(&ones, DEFAULT_RELATIVE_TOL).unwrap();
        assert_eq!(r.verdict, Verdict::PositiveSemiDefinite);
        assert!(r.lambda_min.abs() < 1e-12);
        assert!((r.lambda_max - 4.0).abs() < 1e-12);

        let mixed = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, -1.0]]);
        let r = spd_verdict(&mixed, DEFAULT_RELATIVE_TOL).unwrap();
        assert_eq!(r.verdict, Verdict::Indefinite);

        let two_one = Mat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let (lo, hi) = min_max_eigenvalues(&two_one).unwrap();
        assert!((lo - 1.0).abs() < 1e-12 && (hi - 3.0).abs() < 1e-12);

        assert!(matches!(
            spd_verdict(&Mat::identity(2), f64::NAN),
            Err(SpectraError::BadTolerance(_))
        ));
    }

    #[test]
    fn strict_first_layer_stays_strict_through_value_step() {
        // any strictly positive definite covariance, fed through the value
        // expectation of a non-polynomial activation, stays strictly
        // positive definite
        for seed in 0..5u64 {
            let vals = lcg_stream(seed, 18);
            let b = Mat::from_fn(6, 3, |i, j| vals[i * 3 + j]);
            let base = b.matmul(&b.transpose());
            let k1 = Mat::from_fn(6, 6, |i, j| base[(i, j)] + if i == j { 0.5 } else { 0.0 });
            let (lo, _) = min_max_eigenvalues(&k1).unwrap();
            assert!(lo >= 0.5 - 1e-9);

            let prev = KernelMatrix {
                values: k1,
                kind: crate::kernels::KernelKind::SigmaHat,
                layer: 1,
            };
            let cfg = ArchitectureConfig::new(
                2,
                2,
                0.0,
                1.0,
                1.0,
                Layer1Convention::Standard,
            )
            .unwrap();
            for spec in [ActivationSpec::tanh(), ActivationSpec::erf(), ActivationSpec::gelu()]
            {
                let next = kernels::sigma_next(&prev, &spec, &cfg, &rule()).unwrap();
                let report = spectral_report(&next, DEFAULT_RELATIVE_TOL).unwrap();
                assert_eq!(
                    report.verdict,
                    Verdict::StrictlyPositiveDefinite,
                    "seed {seed} {}: lambda_min {}",
                    spec.name,
                    report.lambda_min
                );
            }
        }
    }

    #[test]
    fn every_eigenvalue_matches_inertia_bisection() {
        for seed in 10..13u64 {
            let n = 5 + (seed as usize % 3) * 3;
            let vals = lcg_stream(seed, n * n);
            let raw = Mat::from_fn(n, n, |i, j| vals[i * n + j]);
            let m = Mat::from_fn(n, n, |i, j| 0.5 * (raw[(i, j)] + raw[(j, i)]));
            let eig = linalg::symmetric_eigen(&m).unwrap();
            let scale = m.max_abs().max(1.0);
            let (lo, hi) = linalg::eigen_extremes_by_bisection(&m);
            for k in 0..n {
                // smallest t with at least k+1 eigenvalues strictly below it
                let mut a = lo - scale;
                let mut b = hi + scale;
                for _ in 0..200 {
                    let mid = 0.5 * (a + b);
                    if linalg::count_eigenvalues_below(&m, mid) >= k + 1 {
                        b = mid;
                    } else {
                        a = mid;
                    }
                }
                assert!(
                    (0.5 * (a + b) - eig.values[k]).abs() < 1e-8 * scale,
                    "seed {seed} eigenvalue {k}"
                );
            }
        }
    }

    #[test]
    fn pure_square_activation_collapses_beyond_feature_rank() {
        // sigma(x) = x^2 on scalar inputs: the second-layer covariance is a
        // quadratic form in (x^2, x, 1), hence rank at most 3
        let spec = ActivationSpec::parse("poly:0,0,1").unwrap();
        let inputs: Vec<Vec<f64>> =
            [-1.5, -0.9, -0.2, 0.4, 0.8, 1.3, 2.1].iter().map(|&x| vec![x]).collect();
        let training = TrainingSet::new(inputs).unwrap();
        let cfg =
            ArchitectureConfig::new(1, 2, 1.0, 1.0, 1.0, Layer1Convention::Standard).unwrap();
        let stack = kernels::kernel_stack(&training, &spec, &cfg, &rule(), 2).unwrap();
        let report = spectral_report(&stack.sigma[0], DEFAULT_RELATIVE_TOL).unwrap();
        assert_ne!(report.verdict, Verdict::StrictlyPositiveDefinite);
        assert!(report.lambda_min.abs() <= 1e-10 * report.lambda_max);
    }

    #[test]
    fn schur_product_of_psd_factors_stays_psd() {
        for seed in 0..3u64 {
            let vals = lcg_stream(seed, 256);
            let b1 = Mat::from_fn(16, 5, |i, j| vals[i * 5 + j]);
            let b2 = Mat::from_fn(16, 7, |i, j| vals[(i * 7 + j) % 256] * 0.8);
            let a = b1.matmul(&b1.transpose());
            let b = b2.matmul(&b2.transpose());
            let s = schur_product(&a, &b);
            let (lo, hi) = min_max_eigenvalues(&s).unwrap();
            assert_ne!(classify(lo, hi, DEFAULT_RELATIVE_TOL), Verdict::Indefinite);
        }
    }

    #[test]
    fn uniformly_positive_first_layer_lifts_to_strict_second_layer() {
        // preactivation covariance with smallest eigenvalue well above 0.1
        let training =
            TrainingSet::new(vec![vec![1.3, 0.1], vec![-0.2, 1.4], vec![0.9, -1.0]]).unwrap();
        let cfg =
            ArchitectureConfig::new(2, 2, 1.0, 1.0, 1.0, Layer1Convention::Standard).unwrap();
        let stack =
            kernels::kernel_stack(&training, &ActivationSpec::tanh(), &cfg, &rule(), 2).unwrap();
        let (first_min, _) = min_max_eigenvalues(&stack.sigma_hat[0].values).unwrap();
        assert!(first_min > 0.1, "fixture drifted: {first_min}");
        let second = spectral_report(&stack.sigma[0], DEFAULT_RELATIVE_TOL).unwrap();
        assert_eq!(second.verdict, Verdict::StrictlyPositiveDefinite);
    }
}
