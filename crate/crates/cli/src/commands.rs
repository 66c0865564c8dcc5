//! Subcommand implementations. Each loads its inputs, delegates the
//! numerics to the library, and writes deterministic text output.

use std::path::Path;

use serde::Deserialize;

use ntk_core::activations::ActivationSpec;
use ntk_core::dynamics::{gd_train, linearized_flow, GdConfig, LearningRate};
use ntk_core::findiff::{polynomial_degree_estimate, DegreeVerdict};
use ntk_core::gauss::SeededSampler;
use ntk_core::kernels::{kernel_stack, theta_recursion, KernelMatrix, KernelStack};
use ntk_core::linalg::Mat;
use ntk_core::network::{init_params, monte_carlo_ntk};
use ntk_core::spectra::{
    classify, min_max_eigenvalues, positivity_report, SpectralReport, Verdict,
    DEFAULT_RELATIVE_TOL,
};

use crate::config::RunConfig;
use crate::data::{self, LoadedData};
use crate::emit::{fmt_f64, join_f64, json_string, read_text, write_text};
use crate::errors::{dynamics_error, findiff_error, kernel_error, network_error, spectra_error};
use crate::{fdsuite, CliError};

/// Stream id reserved for drawing default training targets, far away from
/// the per-sample parameter streams.
const TARGET_STREAM: u64 = 0x7417_4e75;

fn load(cfg: &RunConfig, data_path: &Path) -> Result<LoadedData, CliError> {
    data::load_training_set(data_path, cfg.architecture.n0, cfg.architecture.beta)
}

fn print_warnings(warnings: &[String]) {
    for w in warnings {
        eprintln!("{w}");
    }
}

fn matrix_record(km: &KernelMatrix) -> String {
    format!(
        "{{\"kind\":{},\"layer\":{},\"rows\":{},\"cols\":{},\"values\":[{}]}}",
        json_string(km.kind.tag()),
        km.layer,
        km.values.rows(),
        km.values.cols(),
        join_f64(km.values.data())
    )
}

fn kernels_json(stack: &KernelStack, n: usize, depth: usize, activation: &str) -> String {
    let records: Vec<String> = stack
        .sigma_hat
        .iter()
        .chain(&stack.sigma)
        .chain(&stack.sigma_dot)
        .chain(&stack.theta)
        .map(matrix_record)
        .collect();
    format!(
        "{{\"n\":{n},\"depth\":{depth},\"activation\":{},\"matrices\":[\n{}\n]}}\n",
        json_string(activation),
        records.join(",\n")
    )
}

/// `kernel`: the exact kernel stack through the requested depth.
pub fn cmd_kernel(
    cfg: &RunConfig,
    data_path: &Path,
    depth: usize,
    out: &Path,
) -> Result<(), CliError> {
    let loaded = load(cfg, data_path)?;
    print_warnings(&loaded.warnings);
    let stack = kernel_stack(&loaded.training, &cfg.activation, &cfg.architecture, &cfg.rule, depth)
        .map_err(kernel_error)?;
    let json = kernels_json(&stack, loaded.training.len(), depth, &cfg.activation.name);
    write_text(out, &json)
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("stderr entries are never NaN"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// `empirical`: Monte Carlo width sweep against the exact tangent kernel.
pub fn cmd_empirical(
    cfg: &RunConfig,
    data_path: &Path,
    widths: &[usize],
    samples: usize,
    seed_flag: Option<u64>,
    out: &Path,
) -> Result<(), CliError> {
    if widths.is_empty() {
        return Err(CliError::Validation("at least one width is required".into()));
    }
    if samples == 0 {
        return Err(CliError::Validation("at least one sample is required".into()));
    }
    let loaded = load(cfg, data_path)?;
    print_warnings(&loaded.warnings);
    let seed = seed_flag.unwrap_or(cfg.seed);
    let depth = cfg.architecture.depth;
    let thetas =
        theta_recursion(&loaded.training, &cfg.activation, &cfg.architecture, &cfg.rule, depth)
            .map_err(kernel_error)?;
    let exact = &thetas.last().expect("depth is at least 1").values;
    let exact_norm = exact.frobenius_norm();
    if exact_norm == 0.0 {
        return Err(CliError::Numerical(
            "exact tangent kernel is identically zero; relative error is undefined".into(),
        ));
    }
    let mut csv = String::from("width,sample_count,frobenius_error_vs_exact,median_stderr\n");
    for (index, &width) in widths.iter().enumerate() {
        let sampler = SeededSampler::new(seed, (index as u64) << 32);
        let hidden = vec![width; depth - 1];
        let mc = monte_carlo_ntk(
            &cfg.architecture,
            &hidden,
            &loaded.training,
            &cfg.activation,
            samples,
            &sampler,
        )
        .map_err(network_error)?;
        let error = mc.mean.frobenius_distance(exact) / exact_norm;
        let stderr = median(mc.stderr.data());
        csv.push_str(&format!(
            "{width},{},{},{}\n",
            mc.n_samples,
            fmt_f64(error),
            fmt_f64(stderr)
        ));
    }
    write_text(out, &csv)
}

fn spectrum_json(reports: &[SpectralReport]) -> String {
    let records: Vec<String> = reports
        .iter()
        .map(|r| {
            format!(
                "{{\"matrix_kind\":{},\"layer\":{},\"lambda_min\":{},\"lambda_max\":{},\
                 \"relative_tol\":{},\"verdict\":{}}}",
                json_string(&r.matrix_kind),
                r.layer,
                fmt_f64(r.lambda_min),
                fmt_f64(r.lambda_max),
                fmt_f64(r.relative_tol),
                json_string(r.verdict.tag())
            )
        })
        .collect();
    format!("[\n{}\n]\n", records.join(",\n"))
}

/// `spectrum`: positivity verdicts for every kernel in the stack.
pub fn cmd_spectrum(
    cfg: &RunConfig,
    data_path: &Path,
    depth: usize,
    tol_flag: Option<f64>,
    out: &Path,
) -> Result<(), CliError> {
    let loaded = load(cfg, data_path)?;
    let tol = tol_flag
        .or_else(|| cfg.tolerance("relative_tol"))
        .unwrap_or(DEFAULT_RELATIVE_TOL);
    let report = positivity_report(
        &loaded.training,
        &cfg.activation,
        &cfg.architecture,
        &cfg.rule,
        depth,
        tol,
    )
    .map_err(spectra_error)?;
    for w in &report.hypothesis_warnings {
        eprintln!("warning: {w}");
    }
    write_text(out, &spectrum_json(&report.reports))
}

fn parse_learning_rate(text: &str) -> Result<LearningRate, CliError> {
    if text.trim() == "auto" {
        return Ok(LearningRate::Auto);
    }
    let value: f64 = text.trim().parse().map_err(|_| {
        CliError::Validation(format!("--lr must be \"auto\" or a positive real, got {text:?}"))
    })?;
    Ok(LearningRate::Fixed(value))
}

fn default_targets(seed: u64, n: usize) -> Vec<f64> {
    let mut sampler = SeededSampler::new(seed, TARGET_STREAM);
    (0..n).map(|_| sampler.uniform_in(-1.0, 1.0)).collect()
}

/// `train`: full-batch gradient descent at one width.
#[allow(clippy::too_many_arguments)]
pub fn cmd_train(
    cfg: &RunConfig,
    data_path: &Path,
    width: usize,
    steps: usize,
    lr_text: &str,
    seed_flag: Option<u64>,
    targets_path: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let loaded = load(cfg, data_path)?;
    print_warnings(&loaded.warnings);
    let n = loaded.training.len();
    let seed = seed_flag.unwrap_or(cfg.seed);
    let learning_rate = parse_learning_rate(lr_text)?;
    let targets = match targets_path {
        Some(path) => data::load_column(path, n)?,
        None => default_targets(seed, n),
    };
    let hidden = vec![width; cfg.architecture.depth - 1];
    let mut sampler = SeededSampler::new(seed, 0);
    let mut params =
        init_params(&cfg.architecture, &hidden, &mut sampler).map_err(network_error)?;
    let result = gd_train(
        &mut params,
        &loaded.training,
        &targets,
        &cfg.activation,
        &cfg.architecture,
        &GdConfig { steps, learning_rate },
    )
    .map_err(dynamics_error)?;
    eprintln!("step size {}", fmt_f64(result.learning_rate));
    let mut csv = String::from("step,loss\n");
    for (step, &loss) in result.losses.iter().enumerate() {
        csv.push_str(&format!("{step},{}\n", fmt_f64(loss)));
    }
    write_text(out, &csv)
}

#[derive(Deserialize)]
struct KernelsFile {
    #[allow(dead_code)]
    n: usize,
    #[allow(dead_code)]
    depth: usize,
    #[allow(dead_code)]
    #[serde(default)]
    activation: Option<String>,
    matrices: Vec<MatrixRecord>,
}

#[derive(Deserialize)]
struct MatrixRecord {
    kind: String,
    layer: usize,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

/// Picks the deepest tangent kernel out of a stored stack and validates its
/// shape. Structural damage is a validation error; numerical damage
/// (non-finite or indefinite entries) surfaces as a numerical failure.
fn load_theta(path: &Path) -> Result<(Mat, usize), CliError> {
    let text = read_text(path)?;
    let file: KernelsFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let record = file
        .matrices
        .iter()
        .filter(|m| m.kind == "theta")
        .max_by_key(|m| m.layer)
        .ok_or_else(|| {
            CliError::Validation(format!("{}: no tangent kernel records", path.display()))
        })?;
    if record.rows == 0 || record.rows != record.cols {
        return Err(CliError::Validation(format!(
            "{}: theta at layer {} has shape {}x{}, expected square and nonempty",
            path.display(),
            record.layer,
            record.rows,
            record.cols
        )));
    }
    if record.values.len() != record.rows * record.cols {
        return Err(CliError::Validation(format!(
            "{}: theta at layer {} carries {} values for a {}x{} matrix",
            path.display(),
            record.layer,
            record.values.len(),
            record.rows,
            record.cols
        )));
    }
    if record.values.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Numerical(format!(
            "{}: theta at layer {} contains non-finite entries",
            path.display(),
            record.layer
        )));
    }
    let n = record.rows;
    let theta = Mat::from_fn(n, n, |i, j| record.values[i * n + j]);
    Ok((theta, record.layer))
}

/// `flow`: closed-form linearized dynamics under a stored tangent kernel.
#[allow(clippy::too_many_arguments)]
pub fn cmd_flow(
    theta_path: &Path,
    t0: f64,
    t1: f64,
    points: usize,
    f0_path: Option<&Path>,
    targets_path: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    if !(t0.is_finite() && t1.is_finite() && t0 >= 0.0 && t1 >= t0) {
        return Err(CliError::Validation(format!(
            "time window must satisfy 0 <= t0 <= t1, got {t0}..{t1}"
        )));
    }
    if points == 0 {
        return Err(CliError::Validation("at least one time point is required".into()));
    }
    let (theta, layer) = load_theta(theta_path)?;
    let (lambda_min, lambda_max) = min_max_eigenvalues(&theta).map_err(spectra_error)?;
    if classify(lambda_min, lambda_max, DEFAULT_RELATIVE_TOL) == Verdict::Indefinite {
        return Err(CliError::Numerical(format!(
            "{}: theta at layer {layer} is not positive semidefinite: lambda_min {}",
            theta_path.display(),
            fmt_f64(lambda_min)
        )));
    }
    let n = theta.rows();
    let f0 = match f0_path {
        Some(path) => data::load_column(path, n)?,
        None => vec![0.0; n],
    };
    let targets = match targets_path {
        Some(path) => data::load_column(path, n)?,
        None => vec![1.0; n],
    };
    let times: Vec<f64> = if points == 1 {
        vec![t0]
    } else {
        (0..points).map(|i| t0 + (t1 - t0) * i as f64 / (points - 1) as f64).collect()
    };
    let states = linearized_flow(&theta, &f0, &targets, &times).map_err(dynamics_error)?;
    let mut csv = String::from("t,loss");
    for i in 1..=n {
        csv.push_str(&format!(",f_{i}"));
    }
    csv.push('\n');
    for state in &states {
        csv.push_str(&format!(
            "{},{},{}\n",
            fmt_f64(state.t),
            fmt_f64(state.loss),
            join_f64(&state.outputs)
        ));
    }
    write_text(out, &csv)
}

fn parse_domain(text: &str) -> Result<(f64, f64), CliError> {
    let bad = || {
        CliError::Validation(format!(
            "--domain must look like \"lo:hi\" with lo < hi, got {text:?}"
        ))
    };
    let (lo_text, hi_text) = text.split_once(':').ok_or_else(bad)?;
    let lo: f64 = lo_text.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi_text.trim().parse().map_err(|_| bad())?;
    Ok((lo, hi))
}

/// `findiff degree`: polynomial-degree scan of a named function.
pub fn cmd_findiff_degree(
    function: &str,
    domain_text: &str,
    max_order: usize,
    tol: f64,
) -> Result<(), CliError> {
    let spec = ActivationSpec::parse(function).map_err(|e| CliError::Validation(e.to_string()))?;
    let domain = parse_domain(domain_text)?;
    let verdict = polynomial_degree_estimate(&|x| spec.eval(x), domain, max_order, tol)
        .map_err(findiff_error)?;
    let head = format!(
        "{{\"command\":\"degree\",\"function\":{},\"lo\":{},\"hi\":{},\"max_order\":{max_order},\
         \"tolerance\":{}",
        json_string(&spec.name),
        fmt_f64(domain.0),
        fmt_f64(domain.1),
        fmt_f64(tol)
    );
    let tail = match verdict {
        DegreeVerdict::Polynomial { degree } => {
            format!(",\"verdict\":\"polynomial\",\"degree\":{degree}}}")
        }
        DegreeVerdict::NonPolynomial { .. } => ",\"verdict\":\"non_polynomial\"}".to_string(),
    };
    println!("{head}{tail}");
    Ok(())
}

/// `findiff identities`: randomized residual suite for the difference
/// identities, reported as one JSON record.
pub fn cmd_findiff_identities(trials: usize, seed: u64) -> Result<(), CliError> {
    if trials == 0 {
        return Err(CliError::Validation("at least one trial is required".into()));
    }
    let checks = fdsuite::identity_suite(trials, seed);
    let records: Vec<String> = checks
        .iter()
        .map(|c| {
            format!(
                "{{\"name\":{},\"trials\":{},\"worst_relative_residual\":{},\"tolerance\":{},\
                 \"pass\":{}}}",
                json_string(c.name),
                c.trials,
                fmt_f64(c.worst_relative_residual),
                fmt_f64(c.tolerance),
                c.pass
            )
        })
        .collect();
    println!(
        "{{\"command\":\"identities\",\"trials\":{trials},\"seed\":{seed},\"checks\":[{}]}}",
        records.join(",")
    );
    Ok(())
}
