//! Gaussian quadrature, bivariate normal expectations, and deterministic
//! sampling.
//!
//! The central operation is `expectation_pair`: E[g(u) h(v)] for a centered
//! bivariate normal (u, v) with covariance [[a, c], [c, b]]. The covariance
//! is Cholesky-factored and the integral evaluated in standardized
//! coordinates, where the integration window [-10, 10] is split into panels
//! at the images of every integrand kink and each panel is handled by
//! Gauss-Legendre nodes against the explicit normal density. Kink-aware
//! panels keep piecewise functions such as relu at full accuracy; a plain
//! Hermite rule stalls near the kink no matter its order.
//!
//! Randomness comes from a counter-based generator: every draw is a pure
//! function of (seed, stream, counter), so any draw sequence can be replayed
//! or sharded without hidden state. Normal variates use the inverse CDF, so
//! draw k of a sequence is the same value no matter what was drawn before it.

use crate::activations::ActivationSpec;
use crate::linalg::{self, LinalgError, Mat};
use thiserror::Error;

/// Default Gauss-Hermite order used by the command line and the tests.
pub const DEFAULT_QUADRATURE_ORDER: usize = 64;
/// Largest accepted quadrature order.
pub const MAX_QUADRATURE_ORDER: usize = 512;

/// Integration window half-width in standard deviations. The normal mass
/// beyond it is around 1e-23, far below every tolerance in the crate.
const TRUNCATION_RADIUS: f64 = 10.0;
/// Panels wider than this are subdivided before Gauss-Legendre is applied.
const MAX_PANEL_WIDTH: f64 = 1.5;
/// Determinant threshold, relative to a*b, below which the pair integral
/// falls back to its exact one-dimensional limit.
const COLLAPSE_TOL: f64 = 1e-12;

const SQRT_2PI: f64 = 2.5066282746310002;
const GOLDEN: u64 = 0x9e3779b97f4a7c15;

/// Errors from covariance validation, rule construction, and factorization.
#[derive(Debug, Error)]
pub enum GaussError {
    #[error("covariance entries must be finite, got a={a}, b={b}, c={c}")]
    NonFinite { a: f64, b: f64, c: f64 },
    #[error("variance {value:.6e} is negative beyond the rounding allowance")]
    NegativeVariance { value: f64 },
    #[error("covariance c={c:.6e} violates c^2 <= a*b for a={a:.6e}, b={b:.6e}")]
    ExcessiveCovariance { a: f64, b: f64, c: f64 },
    #[error("closed form requires strictly positive variances, got a={a:.6e}, b={b:.6e}")]
    NonPositiveVariance { a: f64, b: f64 },
    #[error("quadrature order {got} is outside 1..={max}")]
    BadOrder { got: usize, max: usize },
    #[error("matrix has eigenvalue {lambda_min:.6e}, below the semi-definite tolerance {tol:.6e}")]
    NotPositiveSemiDefinite { lambda_min: f64, tol: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// A scalar integrand that can report where it is not smooth.
pub trait ScalarFunction {
    fn eval(&self, x: f64) -> f64;
    /// Points where the function or its derivative jumps; used to place
    /// panel boundaries. Empty means smooth everywhere.
    fn breakpoints(&self) -> &[f64] {
        &[]
    }
}

impl<F: Fn(f64) -> f64> ScalarFunction for F {
    fn eval(&self, x: f64) -> f64 {
        self(x)
    }
}

/// An activation used as an integrand.
pub struct ActivationValue<'a>(pub &'a ActivationSpec);

impl ScalarFunction for ActivationValue<'_> {
    fn eval(&self, x: f64) -> f64 {
        self.0.eval(x)
    }
    fn breakpoints(&self) -> &[f64] {
        self.0.breakpoints()
    }
}

/// An activation derivative used as an integrand.
pub struct ActivationDerivative<'a>(pub &'a ActivationSpec);

impl ScalarFunction for ActivationDerivative<'_> {
    fn eval(&self, x: f64) -> f64 {
        self.0.eval_derivative(x)
    }
    fn breakpoints(&self) -> &[f64] {
        self.0.breakpoints()
    }
}

/// Validated covariance of a centered bivariate normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cov2 {
    a: f64,
    b: f64,
    c: f64,
}

impl Cov2 {
    /// Validates and normalizes a raw covariance triple.
    ///
    /// Variances may be negative only within a 1e-12 relative rounding
    /// allowance (clamped to zero); the cross term may exceed the
    /// Cauchy-Schwarz bound by at most 1e-12 * max(a, b) and is clamped
    /// back onto it.
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self, GaussError> {
        if !(a.is_finite() && b.is_finite() && c.is_finite()) {
            return Err(GaussError::NonFinite { a, b, c });
        }
        let var_scale = a.abs().max(b.abs()).max(1e-300);
        if a < -1e-12 * var_scale {
            return Err(GaussError::NegativeVariance { value: a });
        }
        if b < -1e-12 * var_scale {
            return Err(GaussError::NegativeVariance { value: b });
        }
        let a = a.max(0.0);
        let b = b.max(0.0);
        if c * c > a * b + 1e-12 * a.max(b) {
            return Err(GaussError::ExcessiveCovariance { a, b, c });
        }
        let bound = (a * b).sqrt();
        let c = c.clamp(-bound, bound);
        Ok(Cov2 { a, b, c })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// Determinant a*b - c^2, nonnegative after validation.
    pub fn det(&self) -> f64 {
        (self.a * self.b - self.c * self.c).max(0.0)
    }

    /// Correlation coefficient, zero when either variance vanishes.
    pub fn correlation(&self) -> f64 {
        let denom = (self.a * self.b).sqrt();
        if denom == 0.0 {
            0.0
        } else {
            (self.c / denom).clamp(-1.0, 1.0)
        }
    }

    /// True when the distribution is concentrated on a line.
    pub fn is_collapsed(&self) -> bool {
        self.det() < COLLAPSE_TOL * self.a * self.b
    }

    /// The swapped covariance, for E[g(u) h(v)] = E[h(v') g(u')] checks.
    pub fn swapped(&self) -> Cov2 {
        Cov2 { a: self.b, b: self.a, c: self.c }
    }
}

/// Gauss-Hermite rule in standard normal form: `sum_i weights[i] *
/// f(nodes[i])` approximates E[f(Z)] for Z ~ N(0, 1), exactly for
/// polynomials of degree at most 2 * order - 1.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub order: usize,
}

impl QuadratureRule {
    /// Builds the rule from the symmetric tridiagonal Jacobi matrix of the
    /// Hermite recurrence. The raw weights sum to sqrt(pi); they are stored
    /// normalized so they sum to one.
    pub fn gauss_hermite(order: usize) -> Result<Self, GaussError> {
        if order == 0 || order > MAX_QUADRATURE_ORDER {
            return Err(GaussError::BadOrder { got: order, max: MAX_QUADRATURE_ORDER });
        }
        if order == 1 {
            return Ok(QuadratureRule { nodes: vec![0.0], weights: vec![1.0], order });
        }
        let mut jacobi = Mat::zeros(order, order);
        for k in 0..(order - 1) {
            let beta = ((k + 1) as f64 / 2.0).sqrt();
            jacobi[(k, k + 1)] = beta;
            jacobi[(k + 1, k)] = beta;
        }
        let eig = linalg::symmetric_eigen(&jacobi)?;
        let nodes: Vec<f64> =
            eig.values.iter().map(|&t| t * std::f64::consts::SQRT_2).collect();
        let weights: Vec<f64> = (0..order)
            .map(|k| {
                let v = eig.vectors[(0, k)];
                v * v
            })
            .collect();
        let total: f64 = weights.iter().sum();
        debug_assert!((total - 1.0).abs() < 1e-12);
        Ok(QuadratureRule { nodes, weights, order })
    }

    /// Number of Gauss-Legendre nodes each integration panel receives when
    /// this rule drives a panel integral.
    fn panel_nodes(&self) -> usize {
        (self.order / 2).clamp(4, 64)
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1].
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    if n == 1 {
        return (vec![0.0], vec![2.0]);
    }
    let mut jacobi = Mat::zeros(n, n);
    for k in 1..n {
        let kf = k as f64;
        let beta = kf / (4.0 * kf * kf - 1.0).sqrt();
        jacobi[(k - 1, k)] = beta;
        jacobi[(k, k - 1)] = beta;
    }
    let eig = linalg::symmetric_eigen(&jacobi).expect("legendre jacobi eigendecomposition");
    let weights = (0..n)
        .map(|k| {
            let v = eig.vectors[(0, k)];
            2.0 * v * v
        })
        .collect();
    (eig.values, weights)
}

fn std_normal_density(s: f64) -> f64 {
    (-0.5 * s * s).exp() / SQRT_2PI
}

/// Splits [-R, R] at the finite breakpoints and caps panel width.
fn panels(breaks: &[f64]) -> Vec<(f64, f64)> {
    let mut cuts = Vec::with_capacity(breaks.len() + 2);
    cuts.push(-TRUNCATION_RADIUS);
    for &bp in breaks {
        if bp.is_finite() && bp > -TRUNCATION_RADIUS && bp < TRUNCATION_RADIUS {
            cuts.push(bp);
        }
    }
    cuts.push(TRUNCATION_RADIUS);
    cuts.sort_by(|x, y| x.partial_cmp(y).expect("finite panel cuts"));
    let mut out = Vec::new();
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let len = hi - lo;
        if len <= 0.0 {
            continue;
        }
        let pieces = ((len / MAX_PANEL_WIDTH).ceil() as usize).max(1);
        let step = len / pieces as f64;
        for p in 0..pieces {
            out.push((lo + step * p as f64, lo + step * (p + 1) as f64));
        }
    }
    out
}

/// Flattens a panel list into (node, weight * density) pairs.
fn density_weighted_nodes(
    panel_list: &[(f64, f64)],
    gl_nodes: &[f64],
    gl_weights: &[f64],
) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(panel_list.len() * gl_nodes.len());
    for &(lo, hi) in panel_list {
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        for (&x, &w) in gl_nodes.iter().zip(gl_weights) {
            let s = mid + half * x;
            out.push((s, half * w * std_normal_density(s)));
        }
    }
    out
}

/// E[f(sqrt(variance) Z)] for Z ~ N(0, 1).
pub fn expectation_single<F>(f: &F, variance: f64, rule: &QuadratureRule) -> f64
where
    F: ScalarFunction + ?Sized,
{
    assert!(variance.is_finite() && variance >= -1e-300, "variance must be nonnegative");
    let variance = variance.max(0.0);
    if variance == 0.0 {
        return f.eval(0.0);
    }
    let sd = variance.sqrt();
    let breaks: Vec<f64> = f.breakpoints().iter().map(|&k| k / sd).collect();
    let (gn, gw) = gauss_legendre(rule.panel_nodes());
    density_weighted_nodes(&panels(&breaks), &gn, &gw)
        .iter()
        .map(|&(s, w)| w * f.eval(sd * s))
        .sum()
}

/// E[g(u) h(v)] for centered bivariate normal (u, v) with covariance `cov`.
///
/// Full-rank covariances integrate over standardized coordinates with
/// kink-split panels; covariances within the collapse tolerance of singular
/// use the exact one-dimensional limit, and an exactly zero variance
/// becomes a point mass on that coordinate.
pub fn expectation_pair<G, H>(cov: &Cov2, g: &G, h: &H, rule: &QuadratureRule) -> f64
where
    G: ScalarFunction + ?Sized,
    H: ScalarFunction + ?Sized,
{
    let (a, b, c) = (cov.a, cov.b, cov.c);
    if a == 0.0 && b == 0.0 {
        return g.eval(0.0) * h.eval(0.0);
    }
    if a == 0.0 {
        return g.eval(0.0) * expectation_single(h, b, rule);
    }
    if b == 0.0 {
        return expectation_single(g, a, rule) * h.eval(0.0);
    }
    let n_gl = rule.panel_nodes();
    if cov.is_collapsed() {
        // v is almost surely sign(c) * sqrt(b/a) * u
        let sa = a.sqrt();
        let sb = if c < 0.0 { -b.sqrt() } else { b.sqrt() };
        let mut breaks: Vec<f64> = g.breakpoints().iter().map(|&k| k / sa).collect();
        breaks.extend(h.breakpoints().iter().map(|&k| k / sb));
        let (gn, gw) = gauss_legendre(n_gl);
        return density_weighted_nodes(&panels(&breaks), &gn, &gw)
            .iter()
            .map(|&(s, w)| w * g.eval(sa * s) * h.eval(sb * s))
            .sum();
    }
    // keep the kinked integrand on the outer axis where its panel splits are
    // exact; the outer factor also vanishes on whole panels for relu, which
    // skips the matching inner sweeps entirely
    if g.breakpoints().is_empty() && !h.breakpoints().is_empty() {
        return pair_full_rank(b, a, c, h, g, n_gl);
    }
    pair_full_rank(a, b, c, g, h, n_gl)
}

fn pair_full_rank<G, H>(a: f64, b: f64, c: f64, g: &G, h: &H, n_gl: usize) -> f64
where
    G: ScalarFunction + ?Sized,
    H: ScalarFunction + ?Sized,
{
    let l11 = a.sqrt();
    let l21 = c / l11;
    let l22 = (b - l21 * l21).max(0.0).sqrt();
    let (gn, gw) = gauss_legendre(n_gl);

    let mut outer_breaks: Vec<f64> = g.breakpoints().iter().map(|&k| k / l11).collect();
    if l21 != 0.0 {
        for &k in h.breakpoints() {
            let center = k / l21;
            outer_breaks.push(center);
            // the inner integral smooths the h kink over a width of
            // l22 / |l21| around its image; grade panels through that layer
            let layer = l22 / l21.abs();
            if layer < MAX_PANEL_WIDTH {
                for factor in [1.0, 4.0, 16.0, 64.0] {
                    outer_breaks.push(center - factor * layer);
                    outer_breaks.push(center + factor * layer);
                }
            }
        }
    }

    let h_kinked = !h.breakpoints().is_empty();
    let inner_fixed = if h_kinked {
        Vec::new()
    } else {
        density_weighted_nodes(&panels(&[]), &gn, &gw)
    };

    let mut total = 0.0;
    for (lo, hi) in panels(&outer_breaks) {
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        for (&x, &w) in gn.iter().zip(&gw) {
            let s = mid + half * x;
            let wg = half * w * std_normal_density(s) * g.eval(l11 * s);
            if wg == 0.0 {
                continue;
            }
            let shift = l21 * s;
            let inner = if h_kinked {
                let inner_breaks: Vec<f64> =
                    h.breakpoints().iter().map(|&k| (k - shift) / l22).collect();
                density_weighted_nodes(&panels(&inner_breaks), &gn, &gw)
                    .iter()
                    .map(|&(t, wt)| wt * h.eval(shift + l22 * t))
                    .sum::<f64>()
            } else {
                inner_fixed.iter().map(|&(t, wt)| wt * h.eval(shift + l22 * t)).sum::<f64>()
            };
            total += wg * inner;
        }
    }
    total
}

/// E[relu(u) relu(v)] in closed form: sqrt(ab) (sin t + (pi - t) cos t) / (2 pi)
/// with t the angle whose cosine is the correlation.
pub fn relu_expectation_closed_form(cov: &Cov2) -> Result<f64, GaussError> {
    let (a, b) = (cov.a, cov.b);
    if a <= 0.0 || b <= 0.0 {
        return Err(GaussError::NonPositiveVariance { a, b });
    }
    let rho = cov.correlation();
    let theta = rho.acos();
    Ok((a * b).sqrt() / (2.0 * std::f64::consts::PI)
        * (theta.sin() + (std::f64::consts::PI - theta) * rho))
}

/// E[step(u) step(v)] in closed form: (pi - t) / (2 pi), with step the
/// derivative of relu.
pub fn step_expectation_closed_form(cov: &Cov2) -> Result<f64, GaussError> {
    let (a, b) = (cov.a, cov.b);
    if a <= 0.0 || b <= 0.0 {
        return Err(GaussError::NonPositiveVariance { a, b });
    }
    let theta = cov.correlation().acos();
    Ok((std::f64::consts::PI - theta) / (2.0 * std::f64::consts::PI))
}

/// Lower-triangular square root of a symmetric positive semi-definite
/// matrix, validated through its spectrum.
///
/// Rejects matrices whose smallest eigenvalue is below -1e-10 times the
/// largest; within that allowance the pivot-skipping Cholesky zeroes any
/// column whose updated diagonal has fallen to roundoff, so rank-deficient
/// inputs factor without error: [[4,2],[2,1]] gives [[2,0],[1,0]].
pub fn psd_square_root(m: &Mat) -> Result<Mat, GaussError> {
    if !m.is_square() {
        return Err(GaussError::Linalg(LinalgError::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        }));
    }
    let defect = m.symmetry_defect();
    let sym_tol = 1e-12 * m.max_abs().max(1e-300);
    if defect > sym_tol {
        return Err(GaussError::Linalg(LinalgError::NotSymmetric { defect, tol: sym_tol }));
    }
    let eig = linalg::symmetric_eigen(m)?;
    let lambda_min = eig.values[0];
    let lambda_max = eig.values[eig.values.len() - 1];
    let tol = 1e-10 * lambda_max.max(1e-300);
    if lambda_min < -tol {
        return Err(GaussError::NotPositiveSemiDefinite { lambda_min, tol });
    }

    // pivot-skipping Cholesky; the spectral gate above already certified
    // semi-definiteness, so a roundoff-negative diagonal is clamped
    let n = m.rows();
    let scale = (0..n).fold(0.0f64, |s, i| s.max(m[(i, i)].abs())).max(1e-300);
    let thresh = 1e-12 * scale;
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= thresh {
            continue;
        }
        let root = d.sqrt();
        l[(j, j)] = root;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / root;
        }
    }
    Ok(l)
}

/// Draws x = L z with z a vector of independent standard normals, so x has
/// covariance L L^T.
pub fn sample_normal_vector(sampler: &mut SeededSampler, factor: &Mat) -> Vec<f64> {
    assert!(factor.is_square(), "covariance factor must be square");
    let z: Vec<f64> = (0..factor.cols()).map(|_| sampler.next_normal()).collect();
    factor.mul_vec(&z)
}

/// Counter-based deterministic random source.
///
/// Draw n is mix(key + n * golden) for a key derived from (seed, stream);
/// identical (seed, stream) always replays the identical sequence, and
/// distinct streams are statistically independent for every seed.
#[derive(Clone, Debug)]
pub struct SeededSampler {
    seed: u64,
    stream_id: u64,
    key: u64,
    counter: u64,
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl SeededSampler {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let key = mix64(mix64(seed.wrapping_add(GOLDEN)) ^ stream_id.wrapping_mul(0xda942042e4dd58b5));
        SeededSampler { seed, stream_id, key, counter: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A fresh sampler on another stream of the same seed.
    pub fn fork(&self, stream_id: u64) -> Self {
        SeededSampler::new(self.seed, stream_id)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform draw strictly inside (0, 1).
    pub fn next_uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw on [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_uniform()
    }

    /// Standard normal draw through the inverse CDF.
    pub fn next_normal(&mut self) -> f64 {
        standard_normal_quantile(self.next_uniform())
    }
}

/// Inverse standard normal CDF.
///
/// Solves erfc(y) = q by Newton iteration from asymptotic starting points;
/// accurate to a few ulps over the full double range. Arguments at or
/// outside [0, 1] map to the correct infinite limits.
pub fn standard_normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p < 0.5 {
        -std::f64::consts::SQRT_2 * erfc_inv_upper(2.0 * p)
    } else {
        std::f64::consts::SQRT_2 * erfc_inv_upper(2.0 * (1.0 - p))
    }
}

/// Inverse of erfc on (0, 1]: the y >= 0 with erfc(y) = q.
fn erfc_inv_upper(q: f64) -> f64 {
    if q >= 1.0 {
        return 0.0;
    }
    let sqrt_pi = 1.7724538509055159;
    let mut y = if q >= 0.5 {
        // erfc(y) = 1 - 2 y / sqrt(pi) + O(y^3)
        (1.0 - q) * sqrt_pi / 2.0
    } else {
        // erfc(y) = exp(-y^2) / (y sqrt(pi)) (1 + O(1/y^2))
        let y1 = (-q.ln()).sqrt();
        (-(q * sqrt_pi * y1).ln()).sqrt()
    };
    for _ in 0..12 {
        let f = libm::erfc(y) - q;
        let fp = -2.0 / sqrt_pi * (-y * y).exp();
        let step = f / fp;
        y = (y - step).max(0.0);
        if step.abs() <= 1e-16 * (1.0 + y) {
            break;
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::ActivationSpec;

    fn rule64() -> QuadratureRule {
        QuadratureRule::gauss_hermite(DEFAULT_QUADRATURE_ORDER).unwrap()
    }

    fn cov(a: f64, b: f64, c: f64) -> Cov2 {
        Cov2::new(a, b, c).unwrap()
    }

    #[test]
    fn quantile_matches_reference_table() {
        // scipy.stats.norm.ppf
        let table = [
            (1e-300, -3.70470962993612005e1),
            (1e-16, -8.22208221613043477),
            (1e-10, -6.36134090240405570),
            (1e-5, -4.26489079392282466),
            (0.01, -2.32634787404084076),
            (0.1, -1.28155156554460037),
            (0.25, -0.674489750196081705),
            (0.4, -0.253347103135799723),
            (0.5, 0.0),
            (0.6, 0.253347103135799723),
            (0.75, 0.674489750196081705),
            (0.9, 1.28155156554460037),
            (0.99, 2.32634787404084076),
            (0.9999999999, 6.36134088969742173),
        ];
        for (p, z) in table {
            let got = standard_normal_quantile(p);
            assert!(
                (got - z).abs() <= 5e-13 * z.abs().max(1.0),
                "p={p}: got {got}, want {z}"
            );
        }
    }

    #[test]
    fn quantile_symmetry_and_limits() {
        assert_eq!(standard_normal_quantile(0.5), 0.0);
        assert_eq!(standard_normal_quantile(0.0), f64::NEG_INFINITY);
        assert_eq!(standard_normal_quantile(1.0), f64::INFINITY);
        for p in [0.01, 0.2, 0.37, 0.49] {
            let lo = standard_normal_quantile(p);
            let hi = standard_normal_quantile(1.0 - p);
            assert!((lo + hi).abs() < 1e-14 * hi.abs().max(1.0));
        }
    }

    #[test]
    fn sampler_replays_and_separates_streams() {
        let mut s1 = SeededSampler::new(41, 3);
        let first: Vec<u64> = (0..8).map(|_| s1.next_u64()).collect();
        let mut s2 = SeededSampler::new(41, 3);
        let again: Vec<u64> = (0..8).map(|_| s2.next_u64()).collect();
        assert_eq!(first, again);
        let mut other = SeededSampler::new(41, 4);
        let stream4: Vec<u64> = (0..8).map(|_| other.next_u64()).collect();
        assert_ne!(first, stream4);
        let mut fork = s1.fork(4);
        let forked: Vec<u64> = (0..8).map(|_| fork.next_u64()).collect();
        assert_eq!(stream4, forked);
    }

    #[test]
    fn sampler_uniform_moments() {
        let mut s = SeededSampler::new(7, 0);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let u = s.next_uniform();
            assert!(u > 0.0 && u < 1.0);
            sum += u;
            sumsq += u * u;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!((mean - 0.5).abs() < 5e-3, "mean {mean}");
        assert!((var - 1.0 / 12.0).abs() < 5e-3, "var {var}");
    }

    #[test]
    fn sampler_normal_moments() {
        let mut s = SeededSampler::new(11, 2);
        let n = 200_000;
        let (mut m1, mut m2, mut m4) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let z = s.next_normal();
            m1 += z;
            m2 += z * z;
            m4 += z * z * z * z;
        }
        m1 /= n as f64;
        m2 /= n as f64;
        m4 /= n as f64;
        assert!(m1.abs() < 0.01, "mean {m1}");
        assert!((m2 - 1.0).abs() < 0.02, "variance {m2}");
        assert!((m4 - 3.0).abs() < 0.15, "fourth moment {m4}");
    }

    #[test]
    fn hermite_rule_normalization_symmetry_and_nodes() {
        let rule = rule64();
        let sum: f64 = rule.weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        for i in 0..rule.order {
            assert!((rule.nodes[i] + rule.nodes[rule.order - 1 - i]).abs() < 1e-12);
        }
        // numpy.polynomial.hermite.hermgauss(64), converted to unit variance
        assert!((rule.nodes[0] + 1.48861861433394544e1).abs() < 1e-12);
        assert!((rule.nodes[31] + 1.95588910567275537e-1).abs() < 1e-13);
        assert!((rule.weights[31] - 1.53108316361896757e-1).abs() < 1e-13);
        assert!((rule.weights[0] - 3.12318796510758579e-49).abs() < 1e-60);
    }

    #[test]
    fn hermite_rule_integrates_normal_moments_exactly() {
        for order in [8usize, 64] {
            let rule = QuadratureRule::gauss_hermite(order).unwrap();
            let mut expected = 1.0; // E[Z^k] for even k via (k-1)!!
            for k in 0..=(2 * order - 1).min(15) {
                let got: f64 = rule
                    .nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(&x, &w)| w * x.powi(k as i32))
                    .sum();
                if k % 2 == 1 {
                    assert!(got.abs() < 1e-10 * expected, "order {order}, k {k}: {got}");
                } else {
                    if k > 0 {
                        expected *= (k - 1) as f64;
                    }
                    assert!(
                        (got - expected).abs() < 1e-10 * expected,
                        "order {order}, k {k}: {got} vs {expected}"
                    );
                }
            }
        }
    }

    #[test]
    fn hermite_rule_rejects_bad_orders() {
        assert!(matches!(
            QuadratureRule::gauss_hermite(0),
            Err(GaussError::BadOrder { .. })
        ));
        assert!(matches!(
            QuadratureRule::gauss_hermite(MAX_QUADRATURE_ORDER + 1),
            Err(GaussError::BadOrder { .. })
        ));
    }

    #[test]
    fn legendre_nodes_match_reference() {
        // numpy.polynomial.legendre.leggauss
        let (n4, w4) = gauss_legendre(4);
        let ref_n4 = [
            -8.61136311594052573e-1,
            -3.39981043584856257e-1,
            3.39981043584856257e-1,
            8.61136311594052573e-1,
        ];
        let ref_w4 = [
            3.47854845137453683e-1,
            6.52145154862546206e-1,
            6.52145154862546206e-1,
            3.47854845137453683e-1,
        ];
        for i in 0..4 {
            assert!((n4[i] - ref_n4[i]).abs() < 1e-14);
            assert!((w4[i] - ref_w4[i]).abs() < 1e-14);
        }
        let (n32, w32) = gauss_legendre(32);
        assert!((n32[0] + 9.97263861849481570e-1).abs() < 1e-14);
        assert!((n32[15] + 4.83076656877383104e-2).abs() < 1e-14);
        assert!((w32[15] - 9.65400885147278121e-2).abs() < 1e-14);
    }

    #[test]
    fn relu_pair_matches_closed_form_spotwise() {
        let rule = rule64();
        let relu = ActivationSpec::relu();
        let g = ActivationValue(&relu);
        for (a, b, c) in [
            (1.0, 1.0, 0.5),
            (4.0, 1.0, 0.0),
            (0.1, 10.0, -0.9),
            (2.0, 2.0, 1.999999),
            (1.0, 1.0, -0.999),
            (9.5, 0.13, 1.0),
        ] {
            let cv = cov(a, b, c);
            let want = relu_expectation_closed_form(&cv).unwrap();
            let got = expectation_pair(&cv, &g, &g, &rule);
            assert!(
                (got - want).abs() <= 1e-9 * want.abs().max(1e-12),
                "({a},{b},{c}): {got} vs {want}"
            );
        }
    }

    #[test]
    fn step_pair_matches_closed_form_spotwise() {
        let rule = rule64();
        let relu = ActivationSpec::relu();
        let d = ActivationDerivative(&relu);
        for (a, b, c) in [(1.0, 1.0, 0.0), (3.0, 0.5, -0.7), (2.0, 2.0, 2.0)] {
            let cv = cov(a, b, c);
            let want = step_expectation_closed_form(&cv).unwrap();
            let got = expectation_pair(&cv, &d, &d, &rule);
            assert!(
                (got - want).abs() <= 1e-9 * want.abs().max(1e-12),
                "({a},{b},{c}): {got} vs {want}"
            );
        }
    }

    #[test]
    fn smooth_pairs_match_reference_values() {
        // references from adaptive panel integration at tripled resolution
        let rule = rule64();
        let tanh = ActivationSpec::tanh();
        let erf = ActivationSpec::erf();
        let gelu = ActivationSpec::gelu();
        let relu = ActivationSpec::relu();
        let cases: [(&dyn ScalarFunction, &dyn ScalarFunction, f64, f64, f64, f64); 7] = [
            (&ActivationValue(&tanh), &ActivationValue(&tanh), 1.0, 1.0, 0.5, 1.86324413203448086e-1),
            (&ActivationValue(&tanh), &ActivationValue(&tanh), 10.0, 10.0, 5.0, 3.06323255550303486e-1),
            (&ActivationValue(&erf), &ActivationValue(&erf), 2.0, 3.0, -1.2, -2.65926366600310604e-1),
            (&ActivationValue(&gelu), &ActivationValue(&gelu), 10.0, 10.0, 5.0, 2.91760689558426156),
            (&ActivationDerivative(&tanh), &ActivationDerivative(&tanh), 4.0, 9.0, -5.9, 1.91867563175002531e-1),
            (&ActivationDerivative(&gelu), &ActivationDerivative(&gelu), 1.0, 2.0, 0.7, 3.44290353758800294e-1),
            (&ActivationValue(&relu), &ActivationValue(&tanh), 3.0, 0.5, 0.9, 3.26845661428467604e-1),
        ];
        for (i, (g, h, a, b, c, want)) in cases.iter().enumerate() {
            let got = expectation_pair(&cov(*a, *b, *c), *g, *h, &rule);
            assert!(
                (got - want).abs() <= 1e-11 * want.abs().max(1e-3),
                "case {i}: {got} vs {want}"
            );
        }
        // uncorrelated tiny variances: odd symmetry makes the value zero
        let tiny = expectation_pair(
            &cov(1e-6, 1e-6, 0.0),
            &ActivationValue(&tanh),
            &ActivationValue(&tanh),
            &rule,
        );
        assert!(tiny.abs() < 1e-20);
    }

    #[test]
    fn identity_pair_recovers_covariance() {
        let rule = rule64();
        let id = ActivationSpec::identity();
        let g = ActivationValue(&id);
        for (a, b, c) in [(1.0, 1.0, 0.3), (5.0, 0.2, -0.9), (2.0, 2.0, 2.0), (0.5, 8.0, 2.0)] {
            let cv = cov(a, b, c);
            let got = expectation_pair(&cv, &g, &g, &rule);
            assert!((got - c).abs() <= 1e-10 * c.abs().max(1.0), "({a},{b},{c}): {got}");
        }
    }

    #[test]
    fn pair_is_symmetric_under_swap() {
        let rule = rule64();
        let relu = ActivationSpec::relu();
        let tanh = ActivationSpec::tanh();
        let g = ActivationValue(&relu);
        let h = ActivationValue(&tanh);
        for (a, b, c) in [(1.0, 2.0, -0.8), (0.3, 4.0, 1.0), (6.0, 6.0, 5.4)] {
            let cv = cov(a, b, c);
            let fwd = expectation_pair(&cv, &g, &h, &rule);
            let rev = expectation_pair(&cv.swapped(), &h, &g, &rule);
            assert!((fwd - rev).abs() <= 1e-12 * fwd.abs().max(1.0));
        }
    }

    #[test]
    fn single_expectations_match_references() {
        let rule = rule64();
        let tanh = ActivationSpec::tanh();
        let relu = ActivationSpec::relu();
        let gelu = ActivationSpec::gelu();
        let sq = |x: f64| {
            let t = x.tanh();
            t * t
        };
        assert!(
            (expectation_single(&sq, 1.0, &rule) - 3.94294490397841202e-1).abs() < 1e-12
        );
        assert!(
            (expectation_single(&ActivationValue(&relu), 1.0, &rule)
                - 3.98942280401432592e-1)
                .abs()
                < 1e-12
        );
        assert!(
            (expectation_single(&ActivationValue(&gelu), 2.5, &rule)
                - 5.33109046557307731e-1)
                .abs()
                < 1e-12
        );
        assert_eq!(expectation_single(&ActivationValue(&tanh), 0.0, &rule), 0.0);
    }

    #[test]
    fn zero_variance_margins_become_point_masses() {
        let rule = rule64();
        let tanh = ActivationSpec::tanh();
        let two = ActivationSpec::polynomial(vec![2.0]).unwrap();
        let g = ActivationValue(&two);
        let h = ActivationValue(&tanh);
        let sq = |x: f64| x * x;
        // u degenerate: E = g(0) * E[h(v)] and E[tanh] = 0 by symmetry
        assert!(expectation_pair(&cov(0.0, 1.0, 0.0), &g, &h, &rule).abs() < 1e-15);
        let second = expectation_pair(&cov(0.0, 4.0, 0.0), &g, &sq, &rule);
        assert!((second - 8.0).abs() < 1e-10);
        let point = expectation_pair(&cov(0.0, 0.0, 0.0), &g, &g, &rule);
        assert!((point - 4.0).abs() < 1e-15);
    }

    #[test]
    fn fully_anticorrelated_relu_pair_vanishes() {
        let rule = rule64();
        let relu = ActivationSpec::relu();
        let g = ActivationValue(&relu);
        let cv = cov(1.0, 4.0, -2.0);
        assert!(expectation_pair(&cv, &g, &g, &rule).abs() < 1e-15);
        assert!(relu_expectation_closed_form(&cv).unwrap().abs() < 1e-15);
    }

    #[test]
    fn relu_random_covariances_match_closed_form() {
        let rule = rule64();
        let relu = ActivationSpec::relu();
        let g = ActivationValue(&relu);
        let mut s = SeededSampler::new(2024, 0);
        for _ in 0..200 {
            let a = 0.1 * (10.0f64 / 0.1).powf(s.next_uniform());
            let b = 0.1 * (10.0f64 / 0.1).powf(s.next_uniform());
            let rho = s.uniform_in(-0.995, 0.995);
            let cv = cov(a, b, rho * (a * b).sqrt());
            let want = relu_expectation_closed_form(&cv).unwrap();
            let got = expectation_pair(&cv, &g, &g, &rule);
            assert!(
                (got - want).abs() <= 1e-8 * want.abs().max(1e-12),
                "a={a} b={b} rho={rho}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn pair_agrees_with_monte_carlo() {
        let rule = rule64();
        let relu = ActivationSpec::relu();
        let g = ActivationValue(&relu);
        let cv = cov(1.0, 1.0, 0.0);
        let quad = expectation_pair(&cv, &g, &g, &rule);
        assert!((quad - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-12);

        let mut s = SeededSampler::new(7, 91);
        let n = 1_000_000;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..n {
            let u = s.next_normal();
            let v = s.next_normal();
            let x = u.max(0.0) * v.max(0.0);
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / n as f64;
        let stderr = ((sumsq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(
            (mean - quad).abs() < 5.0 * stderr,
            "monte carlo {mean} vs quadrature {quad}, stderr {stderr}"
        );
    }

    #[test]
    fn closed_forms_match_hand_values() {
        assert!((relu_expectation_closed_form(&cov(1.0, 1.0, 1.0)).unwrap() - 0.5).abs() < 1e-15);
        assert!(
            (relu_expectation_closed_form(&cov(1.0, 1.0, 0.0)).unwrap()
                - 1.0 / (2.0 * std::f64::consts::PI))
                .abs()
                < 1e-15
        );
        assert!(
            (relu_expectation_closed_form(&cov(4.0, 1.0, 0.0)).unwrap()
                - 1.0 / std::f64::consts::PI)
                .abs()
                < 1e-15
        );
        assert!(matches!(
            relu_expectation_closed_form(&cov(0.0, 1.0, 0.0)),
            Err(GaussError::NonPositiveVariance { .. })
        ));
        assert!((step_expectation_closed_form(&cov(1.0, 1.0, 1.0)).unwrap() - 0.5).abs() < 1e-15);
        assert!((step_expectation_closed_form(&cov(1.0, 1.0, 0.0)).unwrap() - 0.25).abs() < 1e-15);
        assert!(step_expectation_closed_form(&cov(1.0, 1.0, -1.0)).unwrap().abs() < 1e-15);
    }

    #[test]
    fn covariance_validation() {
        assert!(matches!(
            Cov2::new(1.0, 1.0, 1.1),
            Err(GaussError::ExcessiveCovariance { .. })
        ));
        assert!(matches!(
            Cov2::new(f64::NAN, 1.0, 0.0),
            Err(GaussError::NonFinite { .. })
        ));
        assert!(matches!(
            Cov2::new(-1.0, 1.0, 0.0),
            Err(GaussError::NegativeVariance { .. })
        ));
        // rounding-level violations are clamped, not rejected
        let c = Cov2::new(-1e-14, 1.0, 0.0).unwrap();
        assert_eq!(c.a(), 0.0);
        let c = Cov2::new(1.0, 1.0, 1.0 + 1e-13).unwrap();
        assert_eq!(c.c(), 1.0);
        assert!(c.is_collapsed());
        assert_eq!(cov(2.0, 8.0, -4.0).correlation(), -1.0);
        assert!((cov(1.0, 4.0, 1.0).det() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn square_root_factors_and_rejects() {
        let m = Mat::from_rows(&[vec![4.0, 2.0], vec![2.0, 1.0]]);
        let l = psd_square_root(&m).unwrap();
        assert_eq!(l, Mat::from_rows(&[vec![2.0, 0.0], vec![1.0, 0.0]]));

        let d = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        assert_eq!(psd_square_root(&d).unwrap(), d);

        let indef = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, -1.0]]);
        assert!(matches!(
            psd_square_root(&indef),
            Err(GaussError::NotPositiveSemiDefinite { .. })
        ));

        let skew = Mat::from_rows(&[vec![1.0, 0.5], vec![0.2, 1.0]]);
        assert!(matches!(psd_square_root(&skew), Err(GaussError::Linalg(_))));

        // rank-3 gram of a 6x3 factor
        let b = Mat::from_fn(6, 3, |i, j| ((i * 3 + j) as f64 * 0.37).sin());
        let m = b.matmul(&b.transpose());
        let l = psd_square_root(&m).unwrap();
        let back = l.matmul(&l.transpose());
        assert!(back.frobenius_distance(&m) <= 1e-10 * m.max_abs());
        let nonzero_cols = (0..6).filter(|&j| l[(j, j)] != 0.0).count();
        assert!(nonzero_cols <= 3);
    }

    #[test]
    fn sampled_vectors_have_requested_covariance() {
        let factor = Mat::from_rows(&[vec![2.0, 0.0], vec![1.0, 1.0]]);
        let mut s = SeededSampler::new(5, 17);
        let n = 200_000;
        let (mut c00, mut c01, mut c11) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let x = sample_normal_vector(&mut s, &factor);
            c00 += x[0] * x[0];
            c01 += x[0] * x[1];
            c11 += x[1] * x[1];
        }
        c00 /= n as f64;
        c01 /= n as f64;
        c11 /= n as f64;
        assert!((c00 - 4.0).abs() < 0.1, "c00 {c00}");
        assert!((c01 - 2.0).abs() < 0.1, "c01 {c01}");
        assert!((c11 - 2.0).abs() < 0.1, "c11 {c11}");
    }

    #[test]
    fn quadrature_order_controls_resolution_consistently() {
        // doubling the order must not move smooth results beyond 1e-7
        let coarse = rule64();
        let fine = QuadratureRule::gauss_hermite(128).unwrap();
        let tanh = ActivationSpec::tanh();
        let gelu = ActivationSpec::gelu();
        let erf = ActivationSpec::erf();
        for spec in [&tanh, &gelu, &erf] {
            let g = ActivationValue(spec);
            for (a, b, c) in [(0.25, 0.25, 0.1), (4.0, 4.0, -3.0), (1.0, 4.0, 1.5)] {
                let cv = cov(a, b, c);
                let lo = expectation_pair(&cv, &g, &g, &coarse);
                let hi = expectation_pair(&cv, &g, &g, &fine);
                assert!(
                    (lo - hi).abs() < 1e-7 * hi.abs().max(1.0),
                    "{} ({a},{b},{c})",
                    spec.name
                );
            }
        }
    }
}
