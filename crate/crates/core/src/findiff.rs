//! Finite-difference operators and input-geometry probes.
//!
//! The difference operators come with the exact identities they satisfy
//! (step rescaling, the product rule against the identity map, the chain
//! rule under affine reparametrization) exposed as residual checks, plus a
//! randomized estimator that reads off polynomial degree from vanishing
//! differences. The geometry probes certify the input configurations under
//! which limiting kernels stay nondegenerate: Vandermonde directions that
//! separate matrix rows, two-stage probes producing totally non-aligned
//! planar pairs, and explicit null directions when a polynomial activation
//! makes the kernel rank-deficient.

use crate::activations::ActivationSpec;
use crate::gauss::SeededSampler;
use crate::linalg::{self, Mat};
use thiserror::Error;

/// Grid resolution per axis for combination residuals.
pub const RESIDUAL_GRID_POINTS: usize = 41;
/// Coefficient grid is evaluated over this symmetric square.
pub const RESIDUAL_GRID_HALF_WIDTH: f64 = 3.0;

/// Errors from difference operators and probes.
#[derive(Debug, Error)]
pub enum FindiffError {
    #[error("domain ({0}, {1}) is not a finite nonempty interval")]
    BadDomain(f64, f64),
    #[error("order {0} is outside 1..=16")]
    BadOrder(usize),
    #[error("tolerance must be finite and positive, got {0}")]
    BadTolerance(f64),
    #[error("step scale k must be at least 1, got 0")]
    ZeroScale,
    #[error("increment {index} is not finite")]
    NonFiniteIncrement { index: usize },
    #[error("probe vectors have lengths {z} and {w}; need equal and nonzero")]
    ProbeLengths { z: usize, w: usize },
    #[error("coefficient vector has length {got}, expected {expected}")]
    CoefficientLength { expected: usize, got: usize },
    #[error("coefficient vector is identically zero")]
    ZeroCoefficients,
    #[error("matrix rows {i} and {j} are identical")]
    RepeatedRows { i: usize, j: usize },
    #[error("matrix rows {i} and {j} are proportional")]
    ProportionalRows { i: usize, j: usize },
    #[error("matrix must be nonempty")]
    EmptyMatrix,
    #[error("probe search exhausted {0} candidates; inputs are numerically degenerate")]
    SearchExhausted(u64),
}

/// Mixed increments for an order-n difference. Entries must be finite;
/// zeros are allowed and make the operator vanish identically.
#[derive(Clone, Debug)]
pub struct IncrementVector(Vec<f64>);

impl IncrementVector {
    pub fn new(h: Vec<f64>) -> Result<Self, FindiffError> {
        if let Some(index) = h.iter().position(|v| !v.is_finite()) {
            return Err(FindiffError::NonFiniteIncrement { index });
        }
        Ok(IncrementVector(h))
    }

    /// Difference order: the number of increments.
    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// A pair of vectors z, w of equal length; point i is (z_i, w_i). The pair
/// is called totally non-aligned when every 2x2 minor z_i w_j - z_j w_i is
/// nonzero, which [`total_nonalignment_check`] decides.
#[derive(Clone, Debug)]
pub struct ProbePair {
    z: Vec<f64>,
    w: Vec<f64>,
}

impl ProbePair {
    pub fn new(z: Vec<f64>, w: Vec<f64>) -> Result<Self, FindiffError> {
        if z.len() != w.len() || z.is_empty() {
            return Err(FindiffError::ProbeLengths { z: z.len(), w: w.len() });
        }
        Ok(ProbePair { z, w })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    /// The i-th planar point (z_i, w_i).
    pub fn point(&self, i: usize) -> (f64, f64) {
        (self.z[i], self.w[i])
    }
}

/// Mixed-increment difference: applies one first-order difference per
/// increment. Costs 2^n evaluations for n increments; order 0 returns f(x).
pub fn nth_difference(f: &dyn Fn(f64) -> f64, x: f64, h: &IncrementVector) -> f64 {
    fn recurse(f: &dyn Fn(f64) -> f64, x: f64, h: &[f64]) -> f64 {
        match h.split_first() {
            None => f(x),
            Some((&step, rest)) => recurse(f, x + step, rest) - recurse(f, x, rest),
        }
    }
    recurse(f, x, h.as_slice())
}

/// Equal-increment difference of order n via the alternating binomial sum.
pub fn uniform_nth_difference(f: &dyn Fn(f64) -> f64, x: f64, h: f64, n: usize) -> f64 {
    let mut acc = 0.0;
    let mut binom = 1.0f64;
    for k in 0..=n {
        let sign = if (n - k) % 2 == 0 { 1.0 } else { -1.0 };
        acc += sign * binom * f(x + k as f64 * h);
        binom = binom * (n - k) as f64 / (k + 1) as f64;
    }
    acc
}

/// Coefficients expressing an order-n difference with step k*h as a
/// combination of shifted order-n differences with step h: the
/// coefficients of (1 + z + ... + z^(k-1))^n. Length n*(k-1)+1 and the
/// entries sum to k^n exactly.
pub fn kh_coefficients(n: usize, k: usize) -> Result<Vec<f64>, FindiffError> {
    if k == 0 {
        return Err(FindiffError::ZeroScale);
    }
    let mut coeffs = vec![1.0f64];
    for _ in 0..n {
        let mut next = vec![0.0f64; coeffs.len() + k - 1];
        for (i, &c) in coeffs.iter().enumerate() {
            for j in 0..k {
                next[i + j] += c;
            }
        }
        coeffs = next;
    }
    Ok(coeffs)
}

/// Residual of the step-rescaling identity: the difference with step k*h
/// minus the coefficient-weighted sum of shifted differences with step h.
pub fn check_kh_identity(
    f: &dyn Fn(f64) -> f64,
    x: f64,
    h: f64,
    n: usize,
    k: usize,
) -> Result<f64, FindiffError> {
    let coeffs = kh_coefficients(n, k)?;
    let coarse = uniform_nth_difference(f, x, k as f64 * h, n);
    let fine: f64 = coeffs
        .iter()
        .enumerate()
        .map(|(j, &c)| c * uniform_nth_difference(f, x + j as f64 * h, h, n))
        .sum();
    Ok(coarse - fine)
}

/// Residual of the product rule against the identity map:
/// the order n+1 difference of x*g(x) minus
/// x * (order n+1 difference of g) + (n+1)*h * (order n difference of g at x+h).
pub fn check_leibniz_identity(g: &dyn Fn(f64) -> f64, x: f64, h: f64, n: usize) -> f64 {
    let product = |t: f64| t * g(t);
    let lhs = uniform_nth_difference(&product, x, h, n + 1);
    let rhs = x * uniform_nth_difference(g, x, h, n + 1)
        + (n + 1) as f64 * h * uniform_nth_difference(g, x + h, h, n);
    lhs - rhs
}

/// Residual of the chain rule under an affine reparametrization: stepping
/// the inner variable, f(alpha x + beta (y+h)) - f(alpha x + beta y),
/// minus stepping the outer argument by beta*h. The only discrepancy float
/// arithmetic can produce is in the argument associativity.
pub fn chain_shift_check(
    f: &dyn Fn(f64) -> f64,
    alpha: f64,
    beta: f64,
    x: f64,
    y: f64,
    h: f64,
) -> f64 {
    let base = alpha * x + beta * y;
    let lhs = f(alpha * x + beta * (y + h)) - f(base);
    let rhs = f(base + beta * h) - f(base);
    lhs - rhs
}

/// Verdict of the polynomial-degree scan.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DegreeVerdict {
    /// Some difference order n <= max_order annihilated the function; the
    /// degree is n - 1.
    Polynomial { degree: usize },
    /// No order up to max_order annihilated it.
    NonPolynomial { max_order: usize },
}

/// Estimates polynomial degree by hunting for the smallest difference
/// order that annihilates the function on random stencils.
///
/// For each order n up to max_order, draws 200 stencils with base points
/// uniform in the domain and steps log-uniform in
/// [1e-3 * width, 0.25 * width]. If the largest magnitude of the order-n
/// difference stays within tol of the largest sampled function magnitude,
/// the function is declared polynomial of degree n - 1. The stencil draw
/// uses a fixed internal seed so repeated calls give identical verdicts.
pub fn polynomial_degree_estimate(
    f: &dyn Fn(f64) -> f64,
    domain: (f64, f64),
    max_order: usize,
    tol: f64,
) -> Result<DegreeVerdict, FindiffError> {
    let (lo, hi) = domain;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(FindiffError::BadDomain(lo, hi));
    }
    if max_order == 0 || max_order > 16 {
        return Err(FindiffError::BadOrder(max_order));
    }
    if !tol.is_finite() || tol <= 0.0 {
        return Err(FindiffError::BadTolerance(tol));
    }
    let width = hi - lo;
    let stencils = 200;
    let mut sampler = SeededSampler::new(0x00d1_f7e5_7133_7a11, 0);
    for n in 1..=max_order {
        let h_max = 0.25 * width;
        let h_min = 1e-3 * width;
        let mut worst = 0.0f64;
        let mut f_scale = 0.0f64;
        for _ in 0..stencils {
            let h = h_min * (h_max / h_min).powf(sampler.next_uniform());
            let x = sampler.uniform_in(lo, hi);
            for k in 0..=n {
                f_scale = f_scale.max(f(x + k as f64 * h).abs());
            }
            worst = worst.max(uniform_nth_difference(f, x, h, n).abs());
        }
        if worst <= tol * f_scale.max(1e-300) {
            return Ok(DegreeVerdict::Polynomial { degree: n - 1 });
        }
    }
    Ok(DegreeVerdict::NonPolynomial { max_order })
}

/// Outcome of the pairwise-alignment scan over a planar point pair.
#[derive(Clone, Debug)]
pub struct NonalignmentReport {
    /// True when every pair of points spans the plane.
    pub ok: bool,
    /// First pair whose 2x2 minor vanishes, if any.
    pub offending: Option<(usize, usize)>,
}

/// Checks that all point pairs (z_i, w_i), (z_j, w_j) are linearly
/// independent, using a minor threshold relative to the size of its two
/// products.
pub fn total_nonalignment_check(pair: &ProbePair) -> NonalignmentReport {
    let n = pair.len();
    for i in 0..n {
        for j in (i + 1)..n {
            let (zi, wi) = pair.point(i);
            let (zj, wj) = pair.point(j);
            let minor = zi * wj - zj * wi;
            if minor.abs() <= 1e-12 * ((zi * wj).abs() + (zj * wi).abs()) {
                return NonalignmentReport { ok: false, offending: Some((i, j)) };
            }
        }
    }
    NonalignmentReport { ok: true, offending: None }
}

/// Uniform lattice of (theta_1, theta_2) covering the default residual
/// square: `RESIDUAL_GRID_POINTS` points per axis on the square of
/// half-width `RESIDUAL_GRID_HALF_WIDTH`.
pub fn default_residual_grid() -> Vec<(f64, f64)> {
    let m = RESIDUAL_GRID_POINTS;
    let half = RESIDUAL_GRID_HALF_WIDTH;
    let step = 2.0 * half / (m - 1) as f64;
    let mut grid = Vec::with_capacity(m * m);
    for a in 0..m {
        let t1 = -half + a as f64 * step;
        for b in 0..m {
            grid.push((t1, -half + b as f64 * step));
        }
    }
    grid
}

/// Largest magnitude over the coefficient grid of the combination
/// sum_i u_i * activation(theta_1 * z_i + theta_2 * w_i). A tiny value
/// certifies that the activations pinned at these points are linearly
/// dependent with coefficients u; for non-polynomial activations on a
/// totally non-aligned pair no nonzero u can achieve that.
pub fn linear_combination_residual(
    spec: &ActivationSpec,
    u: &[f64],
    pair: &ProbePair,
    grid: &[(f64, f64)],
) -> Result<f64, FindiffError> {
    if u.len() != pair.len() {
        return Err(FindiffError::CoefficientLength { expected: pair.len(), got: u.len() });
    }
    if u.iter().all(|&c| c == 0.0) {
        return Err(FindiffError::ZeroCoefficients);
    }
    let mut worst = 0.0f64;
    for &(t1, t2) in grid {
        let total: f64 = (0..pair.len())
            .map(|i| u[i] * spec.eval(t1 * pair.z[i] + t2 * pair.w[i]))
            .sum();
        worst = worst.max(total.abs());
    }
    Ok(worst)
}

/// Number of bivariate monomials theta_1^a theta_2^b with a + b <= d.
pub fn bivariate_monomial_count(degree: usize) -> usize {
    (degree + 1) * (degree + 2) / 2
}

/// Monomial evaluations (z^a w^b for a + b <= degree) of one point, in
/// total-degree order.
fn bivariate_monomials(z: f64, w: f64, degree: usize) -> Vec<f64> {
    let mut phi = Vec::with_capacity(bivariate_monomial_count(degree));
    for total in 0..=degree {
        for a in 0..=total {
            let b = total - a;
            phi.push(z.powi(a as i32) * w.powi(b as i32));
        }
    }
    phi
}

/// Unit null vector of the bivariate moment matrix of the pair, when one
/// must exist.
///
/// For an activation that is a polynomial of degree at most d, every
/// function theta -> activation(theta_1 z_i + theta_2 w_i) lies in the span
/// of the monomials theta_1^a theta_2^b with a + b <= d. A coefficient
/// vector u that kills all N rows of monomial evaluations therefore
/// annihilates the combination for every such activation, making it a
/// guaranteed kernel null direction. Such a u exists whenever N exceeds
/// the monomial count (d+1)(d+2)/2; at or below that threshold the
/// construction returns None rather than inventing one.
pub fn construct_degenerate_direction(
    degree: usize,
    pair: &ProbePair,
) -> Option<Vec<f64>> {
    let n = pair.len();
    let m = bivariate_monomial_count(degree);
    if n <= m {
        return None;
    }
    let rows: Vec<Vec<f64>> =
        (0..n).map(|i| bivariate_monomials(pair.z[i], pair.w[i], degree)).collect();
    let moment = Mat::from_rows(&rows);
    // null vector of the transpose = eigenvector of the zero eigenvalue of
    // the n x n Gram of monomial rows; rank <= m < n guarantees one
    let gram = moment.matmul(&moment.transpose());
    let eig = linalg::symmetric_eigen(&gram).expect("gram of finite monomials");
    let u: Vec<f64> = (0..n).map(|i| eig.vectors[(i, 0)]).collect();
    let norm = linalg::dot(&u, &u).sqrt();
    Some(u.iter().map(|v| v / norm).collect())
}

/// A Vandermonde direction that separates the rows of a matrix: the
/// projections of the rows onto `direction` are pairwise distinct.
#[derive(Clone, Debug)]
pub struct DistinctProjections {
    /// The accepted integer parameter t.
    pub parameter: u64,
    /// The direction (1, t, t^2, ..., t^(r-1)).
    pub direction: Vec<f64>,
    /// Row projections along the direction; pairwise distinct.
    pub projections: Vec<f64>,
}

fn vandermonde(t: f64, r: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(r);
    let mut power = 1.0;
    for _ in 0..r {
        y.push(power);
        power *= t;
    }
    y
}

fn pairwise_distinct(values: &[f64]) -> bool {
    for i in 0..values.len() {
        for j in (i + 1)..values.len() {
            if values[i] == values[j] {
                return false;
            }
        }
    }
    true
}

/// Searches integer parameters t = 1, 2, 3, ... for a moment-curve
/// direction (1, t, ..., t^(r-1)) whose projections of the rows of `b` are
/// pairwise distinct.
///
/// Two distinct rows project equally for at most r - 1 parameter values,
/// so a valid integer exists within pairs * (r - 1) + 1 candidates; a
/// small extra margin absorbs rounding collisions. Repeated rows can never
/// be separated and are rejected up front.
pub fn distinct_combination_probe(b: &Mat) -> Result<DistinctProjections, FindiffError> {
    let (n, r) = (b.rows(), b.cols());
    if n == 0 || r == 0 {
        return Err(FindiffError::EmptyMatrix);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if b.row(i) == b.row(j) {
                return Err(FindiffError::RepeatedRows { i, j });
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as u64;
    let cap = pairs * (r as u64 - 1) + 1 + 64;
    for t in 1..=cap {
        let direction = vandermonde(t as f64, r);
        let projections = b.mul_vec(&direction);
        if pairwise_distinct(&projections) {
            return Ok(DistinctProjections { parameter: t, direction, projections });
        }
    }
    Err(FindiffError::SearchExhausted(cap))
}

/// Two-stage integer search for a totally non-aligned pair built from the
/// rows of `b`.
///
/// Each row defines the polynomial p_i(t) = sum_j b_ij t^(j-1). Stage one
/// scans t = 1, 2, ... until w_i = p_i(t) is nonzero for every row; each
/// row rules out at most r - 1 values. Stage two scans s until the pair
/// z_i = p_i(s), w_i passes [`total_nonalignment_check`]; for
/// non-proportional rows each pair of rows rules out at most r - 1 values.
/// Proportional rows (including zero rows) make the search impossible and
/// are rejected up front by exact minor comparison.
pub fn nonaligned_pair_probe(b: &Mat) -> Result<ProbePair, FindiffError> {
    let (n, r) = (b.rows(), b.cols());
    if n == 0 || r == 0 {
        return Err(FindiffError::EmptyMatrix);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            // rows are proportional iff every 2x2 minor vanishes; with one
            // column the minor set is empty and any two scalars qualify
            let mut proportional = true;
            'minors: for p in 0..r {
                for q in (p + 1)..r {
                    if b[(i, p)] * b[(j, q)] - b[(i, q)] * b[(j, p)] != 0.0 {
                        proportional = false;
                        break 'minors;
                    }
                }
            }
            if proportional {
                return Err(FindiffError::ProportionalRows { i, j });
            }
        }
    }

    let row_cap = n as u64 * (r as u64 - 1) + 1 + 64;
    let mut first = None;
    for t in 1..=row_cap {
        let w = b.mul_vec(&vandermonde(t as f64, r));
        if w.iter().all(|&v| v != 0.0) {
            first = Some(w);
            break;
        }
    }
    let Some(w) = first else {
        return Err(FindiffError::SearchExhausted(row_cap));
    };

    let pairs = (n * (n - 1) / 2) as u64;
    let pair_cap = pairs * (r as u64 - 1) + 1 + 64;
    for s in 1..=pair_cap {
        let z = b.mul_vec(&vandermonde(s as f64, r));
        let candidate = ProbePair::new(z, w.clone())?;
        if total_nonalignment_check(&candidate).ok {
            return Ok(candidate);
        }
    }
    Err(FindiffError::SearchExhausted(pair_cap))
}
