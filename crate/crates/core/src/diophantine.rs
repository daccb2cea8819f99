//! Dirichlet-type approximation quality of target matrices: exhaustive
//! integer witness search, the scaled-ball membership test and range
//! scans, an equivalent shortest-vector route through the lattice
//! machinery, and a continued-fraction oracle for the scalar case.
//!
//! Throughout, a target `Y` is an `m×n` matrix, a witness is a pair of
//! integer vectors `(q, p)` with `q ≠ 0`, and the quality of a witness at
//! parameter `N` is `max(N^m·‖qY + p‖_∞, N^{-n}·‖q‖_∞)`. The minimum over
//! witnesses — written `sigma_star` — is at most 1 for every `Y` and `N`
//! (Dirichlet's theorem), and `Y` admits a `σ`-improvement at `N` exactly
//! when `sigma_star ≤ σ`.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{self, rev_lex_less, FlowElement, NormKind};
use crate::util::ratio_to_f64;

/// Candidate budget for the exhaustive witness search.
pub const SEARCH_BUDGET: u128 = 10_000_000;
/// Absolute tolerance applied to boundary comparisons in float mode.
pub const FLOAT_BOUNDARY_TOL: f64 = 1e-9;
/// Depth cap of the continued-fraction expansion.
pub const MAX_CF_DEPTH: usize = 64;

/// An `m×n` target matrix, in exact-rational or floating mode. Row-major
/// `entries`, so entry `(i, j)` sits at index `i·n + j`.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetMatrix {
    F64 { m: usize, n: usize, entries: Vec<f64> },
    Rational { m: usize, n: usize, entries: Vec<BigRational> },
}

impl TargetMatrix {
    /// Floating-mode target.
    ///
    /// # Panics
    ///
    /// Panics if `m` or `n` is zero, the entry count is not `m·n`, or an
    /// entry is not finite.
    pub fn new_f64(m: usize, n: usize, entries: Vec<f64>) -> Self {
        assert!(m >= 1 && n >= 1, "target dimensions must be positive");
        assert_eq!(entries.len(), m * n, "expected {m}x{n} entries");
        assert!(entries.iter().all(|e| e.is_finite()), "entries must be finite");
        TargetMatrix::F64 { m, n, entries }
    }

    /// Exact-rational target.
    ///
    /// # Panics
    ///
    /// Panics if `m` or `n` is zero or the entry count is not `m·n`.
    pub fn new_rational(m: usize, n: usize, entries: Vec<BigRational>) -> Self {
        assert!(m >= 1 && n >= 1, "target dimensions must be positive");
        assert_eq!(entries.len(), m * n, "expected {m}x{n} entries");
        TargetMatrix::Rational { m, n, entries }
    }

    /// Number of rows `m`.
    pub fn rows(&self) -> usize {
        match self {
            TargetMatrix::F64 { m, .. } | TargetMatrix::Rational { m, .. } => *m,
        }
    }

    /// Number of columns `n`.
    pub fn cols(&self) -> usize {
        match self {
            TargetMatrix::F64 { n, .. } | TargetMatrix::Rational { n, .. } => *n,
        }
    }

    /// Ambient dimension `m + n` of the associated lattices.
    pub fn dimension(&self) -> usize {
        self.rows() + self.cols()
    }

    /// Whether exact-rational arithmetic is available.
    pub fn is_rational(&self) -> bool {
        matches!(self, TargetMatrix::Rational { .. })
    }

    /// Entry `(i, j)` as a float.
    pub fn entry_f64(&self, i: usize, j: usize) -> f64 {
        let n = self.cols();
        match self {
            TargetMatrix::F64 { entries, .. } => entries[i * n + j],
            TargetMatrix::Rational { entries, .. } => ratio_to_f64(&entries[i * n + j]),
        }
    }
}

/// An approximation witness: `q ≠ 0`, with `residual = ‖qY + p‖_∞` and
/// `height = ‖q‖_∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproxWitness {
    pub q: Vec<i64>,
    pub p: Vec<i64>,
    pub residual: f64,
    pub height: f64,
}

/// Result of a witness search at one parameter `N`: the minimized quality
/// `sigma_star` and a witness achieving it. `sigma_star_exact` carries the
/// exact value when the target was rational.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub big_n: u64,
    pub sigma_star: f64,
    pub sigma_star_exact: Option<BigRational>,
    pub witness: ApproxWitness,
}

impl QualityReport {
    /// Whether this report certifies the `σ`-strengthened inequalities at
    /// its `N`: exact comparison when the target was rational, otherwise a
    /// float comparison padded by [`FLOAT_BOUNDARY_TOL`].
    ///
    /// # Panics
    ///
    /// Panics unless `0 < σ < 1`.
    pub fn satisfies(&self, sigma: f64) -> bool {
        assert!(sigma > 0.0 && sigma < 1.0, "need 0 < sigma < 1");
        match &self.sigma_star_exact {
            Some(exact) => {
                // the f64 sigma is the dyadic rational it denotes
                *exact <= BigRational::from_float(sigma).expect("finite sigma")
            }
            None => self.sigma_star <= sigma + FLOAT_BOUNDARY_TOL,
        }
    }
}

fn check_budget(m: usize, n: usize, big_n: u64) -> Result<()> {
    let per_axis = (big_n as u128)
        .checked_pow(n as u32)
        .and_then(|b| b.checked_mul(2))
        .and_then(|b| b.checked_add(1));
    let candidates = per_axis.and_then(|b| b.checked_pow(m as u32)).unwrap_or(u128::MAX);
    if candidates > SEARCH_BUDGET {
        return Err(Error::SearchBudgetExceeded { candidates, budget: SEARCH_BUDGET });
    }
    Ok(())
}

/// Flips the signs of `q` and `p` together so the first nonzero entry of
/// `q` is positive; the quality of a witness is sign-symmetric.
fn canonicalize_witness(q: &mut [i64], p: &mut [i64]) {
    if let Some(&lead) = q.iter().find(|&&c| c != 0) {
        if lead < 0 {
            for c in q.iter_mut() {
                *c = -*c;
            }
            for c in p.iter_mut() {
                *c = -*c;
            }
        }
    }
}

/// Advances `q` one step in lexicographic odometer order over the box
/// `[-bound, bound]^m`; returns `false` once exhausted.
fn advance_box(q: &mut [i64], bound: i64) -> bool {
    for i in (0..q.len()).rev() {
        if q[i] < bound {
            q[i] += 1;
            return true;
        }
        q[i] = -bound;
    }
    false
}

/// Nearest integer to a rational, half-integer ties resolved to the even
/// neighbor. On a tie both neighbors give the same distance `1/2`, so the
/// choice never affects a minimized quality — only which witness is
/// reported.
fn round_rational_nearest(x: &BigRational) -> BigInt {
    let floor = x.floor().to_integer();
    let frac = x - BigRational::from(floor.clone());
    let half = BigRational::new(BigInt::one(), BigInt::from(2));
    match frac.cmp(&half) {
        std::cmp::Ordering::Less => floor,
        std::cmp::Ordering::Greater => floor + 1,
        std::cmp::Ordering::Equal => {
            if floor.is_even() {
                floor
            } else {
                floor + 1
            }
        }
    }
}

/// Exhaustive witness search: scans every `q` with `0 < ‖q‖_∞ ≤ N^n`,
/// pairs each with the coordinate-wise nearest integers `p` to `-qY`
/// (distance to the nearest integer is what the quality sees, so
/// half-integer ties cannot hide a better witness), and minimizes the
/// quality. Rational targets are searched in exact arithmetic.
///
/// The reported witness is deterministic: among minimizers, the one whose
/// sign-normalized `q` has the least absolute profile when compared
/// last-coordinate-first (the same rule the shortest-vector search uses),
/// so `Y = 0` reports `q = e_1`.
///
/// # Errors
///
/// [`Error::SearchBudgetExceeded`] when the scan would visit more than
/// [`SEARCH_BUDGET`] candidates — the lattice route has no such limit.
///
/// # Panics
///
/// Panics if `big_n == 0`.
pub fn best_witness(target: &TargetMatrix, big_n: u64) -> Result<QualityReport> {
    assert!(big_n >= 1, "need N >= 1");
    let m = target.rows();
    let n = target.cols();
    check_budget(m, n, big_n)?;
    match target {
        TargetMatrix::F64 { entries, .. } => best_witness_f64(entries, m, n, big_n),
        TargetMatrix::Rational { entries, .. } => best_witness_exact(entries, m, n, big_n),
    }
}

fn best_witness_f64(y: &[f64], m: usize, n: usize, big_n: u64) -> Result<QualityReport> {
    let bound = (big_n as i64).pow(n as u32);
    let n_pow_m = (big_n as f64).powi(m as i32);
    let n_pow_n = (big_n as f64).powi(n as i32);
    let mut best_value = f64::INFINITY;
    let mut best: Option<ApproxWitness> = None;
    let mut q = vec![-bound; m];
    loop {
        if q.iter().any(|&c| c != 0) {
            let mut residual: f64 = 0.0;
            let mut p = vec![0i64; n];
            for j in 0..n {
                let s: f64 = (0..m).map(|i| q[i] as f64 * y[i * n + j]).sum();
                let rounded = s.round();
                residual = residual.max((s - rounded).abs());
                p[j] = -rounded as i64;
            }
            let height = q.iter().map(|c| c.abs()).max().unwrap() as f64;
            let value = (n_pow_m * residual).max(height / n_pow_n);
            let better = if value < best_value {
                true
            } else if value == best_value {
                let mut cq = q.clone();
                let mut cp = p.clone();
                canonicalize_witness(&mut cq, &mut cp);
                rev_lex_less(&cq, &best.as_ref().unwrap().q)
            } else {
                false
            };
            if better {
                let mut cq = q.clone();
                let mut cp = p;
                canonicalize_witness(&mut cq, &mut cp);
                best_value = value;
                best = Some(ApproxWitness { q: cq, p: cp, residual, height });
            }
        }
        if !advance_box(&mut q, bound) {
            break;
        }
    }
    Ok(QualityReport {
        big_n,
        sigma_star: best_value,
        sigma_star_exact: None,
        witness: best.expect("nonempty search box"),
    })
}

fn best_witness_exact(
    y: &[BigRational],
    m: usize,
    n: usize,
    big_n: u64,
) -> Result<QualityReport> {
    let bound = (big_n as i64).pow(n as u32);
    let n_pow_m = BigRational::from(BigInt::from(big_n).pow(m as u32));
    let n_pow_n = BigRational::from(BigInt::from(big_n).pow(n as u32));
    let mut best_value: Option<BigRational> = None;
    let mut best_residual = BigRational::zero();
    let mut best_height = 0i64;
    let mut best: Option<(Vec<i64>, Vec<i64>)> = None;
    let mut q = vec![-bound; m];
    loop {
        if q.iter().any(|&c| c != 0) {
            let mut residual = BigRational::zero();
            let mut p = vec![0i64; n];
            for j in 0..n {
                let mut s = BigRational::zero();
                for i in 0..m {
                    if q[i] != 0 {
                        s += BigRational::from(BigInt::from(q[i])) * &y[i * n + j];
                    }
                }
                let rounded = round_rational_nearest(&s);
                let r = (&s - BigRational::from(rounded.clone())).abs();
                if r > residual {
                    residual = r;
                }
                p[j] = (-rounded).to_i64().expect("witness offset fits in i64");
            }
            let height = q.iter().map(|c| c.abs()).max().unwrap();
            let value = (&n_pow_m * &residual)
                .max(BigRational::new(BigInt::from(height), n_pow_n.numer().clone()));
            let better = match &best_value {
                None => true,
                Some(bv) => {
                    value < *bv || {
                        value == *bv && {
                            let mut cq = q.clone();
                            let mut cp = p.clone();
                            canonicalize_witness(&mut cq, &mut cp);
                            rev_lex_less(&cq, &best.as_ref().unwrap().0)
                        }
                    }
                }
            };
            if better {
                let mut cq = q.clone();
                let mut cp = p;
                canonicalize_witness(&mut cq, &mut cp);
                best_value = Some(value);
                best_residual = residual;
                best_height = height;
                best = Some((cq, cp));
            }
        }
        if !advance_box(&mut q, bound) {
            break;
        }
    }
    let value = best_value.expect("nonempty search box");
    let (q, p) = best.unwrap();
    Ok(QualityReport {
        big_n,
        sigma_star: ratio_to_f64(&value),
        sigma_star_exact: Some(value),
        witness: ApproxWitness {
            q,
            p,
            residual: ratio_to_f64(&best_residual),
            height: best_height as f64,
        },
    })
}

/// Whether `Y` admits a witness meeting both `σ`-scaled inequalities at
/// `N`: `‖qY + p‖_∞ ≤ σ/N^m` and `‖q‖_∞ ≤ σ·N^n` (note the scaled height
/// bound). Equivalent to `sigma_star ≤ σ`; exact for rational targets,
/// with [`FLOAT_BOUNDARY_TOL`] slack on the boundary in float mode.
///
/// # Errors
///
/// As [`best_witness`].
///
/// # Panics
///
/// Panics unless `0 < σ < 1` and `big_n ≥ 1`.
pub fn di_sigma_holds(target: &TargetMatrix, sigma: f64, big_n: u64) -> Result<bool> {
    assert!(sigma > 0.0 && sigma < 1.0, "need 0 < sigma < 1");
    Ok(best_witness(target, big_n)?.satisfies(sigma))
}

/// Outcome of a `σ`-improvement scan over a range of `N`.
///
/// `consistent_on_range` is true when some tail of the range is free of
/// failures (equivalently, the largest failing `N` is not the range end).
/// That is range-limited evidence about the behavior "for all `N` large
/// enough" — never a proof.
#[derive(Debug, Clone, PartialEq)]
pub struct DiSigmaScan {
    pub sigma: f64,
    pub n_min: u64,
    pub n_max: u64,
    pub failing: Vec<u64>,
    pub largest_failing: Option<u64>,
    pub consistent_on_range: bool,
}

impl std::fmt::Display for DiSigmaScan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.largest_failing {
            None => write!(
                f,
                "sigma={}: no failing N in [{}, {}]; consistent on range (range-limited evidence)",
                self.sigma, self.n_min, self.n_max
            ),
            Some(t) if self.consistent_on_range => write!(
                f,
                "sigma={}: {} failing N in [{}, {}], none above {}; consistent on range above that threshold (range-limited evidence)",
                self.sigma,
                self.failing.len(),
                self.n_min,
                self.n_max,
                t
            ),
            Some(t) => write!(
                f,
                "sigma={}: {} failing N in [{}, {}], including the range end {}; not consistent on range",
                self.sigma,
                self.failing.len(),
                self.n_min,
                self.n_max,
                t
            ),
        }
    }
}

/// Runs [`di_sigma_holds`] for every `N` in `[n_min, n_max]` (in parallel,
/// merged in `N` order) and reports all failures.
///
/// # Errors
///
/// As [`best_witness`], for any `N` in the range.
///
/// # Panics
///
/// Panics unless `1 ≤ n_min ≤ n_max` and `0 < σ < 1`.
pub fn di_sigma_scan(
    target: &TargetMatrix,
    sigma: f64,
    n_min: u64,
    n_max: u64,
) -> Result<DiSigmaScan> {
    assert!(n_min >= 1 && n_min <= n_max, "need 1 <= n_min <= n_max");
    let verdicts: Vec<(u64, bool)> = (n_min..=n_max)
        .into_par_iter()
        .map(|big_n| di_sigma_holds(target, sigma, big_n).map(|ok| (big_n, ok)))
        .collect::<Result<Vec<_>>>()?;
    let failing: Vec<u64> =
        verdicts.iter().filter(|(_, ok)| !ok).map(|(big_n, _)| *big_n).collect();
    let largest_failing = failing.last().copied();
    let consistent_on_range = largest_failing.map_or(true, |t| t < n_max);
    Ok(DiSigmaScan { sigma, n_min, n_max, failing, largest_failing, consistent_on_range })
}

/// The same quality as [`best_witness`] computed by the lattice route: the
/// flow applied once to the embedded target turns witness qualities into
/// sup norms of lattice vectors (`(q, p)` becomes
/// `(N^m·(qY + p), N^{-n}·q)`), and vectors with `q = 0` have sup norm
/// `≥ N^m`, which never competes below `N ≥ 2`. The shortest-vector length
/// therefore equals `sigma_star` exactly.
///
/// # Errors
///
/// [`Error::EnumerationOverflow`] from the shortest-vector search.
///
/// # Panics
///
/// Panics if `big_n` is 0 or exceeds `u32::MAX`, or `m + n > 5`.
pub fn dirichlet_quality_via_lattice(target: &TargetMatrix, big_n: u64) -> Result<f64> {
    assert!(big_n >= 1 && big_n <= u32::MAX as u64, "need 1 <= N <= 2^32 - 1");
    let flow = FlowElement::new_split(target.rows(), target.cols(), big_n as u32);
    let basis = lattice::flow_step(&lattice::phi_embed(target), &flow, 1)?;
    Ok(lattice::shortest_vector(&basis, NormKind::Sup)?.length)
}

/// Scalar-case (`m = n = 1`) quality via the continued-fraction expansion
/// of `y`: among denominators `q ≤ N` the running-best residuals are
/// attained at convergents (replacing any `q` by the largest convergent
/// denominator below it weakly improves both the residual and the height),
/// so the minimum of `max(N·|qy − p|, q/N)` over convergents with
/// `q_k ≤ N` is `sigma_star`. The expansion is computed exactly from the
/// dyadic rational `y` denotes, so quotients carry no floating-point
/// noise; a rational `y` terminates on its own.
///
/// # Errors
///
/// [`Error::NonConvergence`] if more than [`MAX_CF_DEPTH`] quotients are
/// needed before the denominators pass `N`.
///
/// # Panics
///
/// Panics if `y` is not finite or `big_n == 0`.
pub fn continued_fraction_quality(y: f64, big_n: u64) -> Result<f64> {
    assert!(y.is_finite(), "need finite y");
    assert!(big_n >= 1, "need N >= 1");
    let rational = BigRational::from_float(y).expect("finite y");
    cf_quality_of_rational(
        rational.numer().clone(),
        rational.denom().clone(),
        big_n,
        y,
    )
}

fn cf_quality_of_rational(num: BigInt, den: BigInt, big_n: u64, y: f64) -> Result<f64> {
    let n_big = BigInt::from(big_n);
    let n_f = big_n as f64;
    let (mut num, mut den) = (num, den);
    // convergent recurrences seeded with the conventional (-1)st terms
    let (mut h_prev2, mut h_prev1) = (BigInt::zero(), BigInt::one());
    let (mut k_prev2, mut k_prev1) = (BigInt::one(), BigInt::zero());
    let mut best = f64::INFINITY;
    let mut depth = 0usize;
    while !den.is_zero() {
        if depth >= MAX_CF_DEPTH {
            return Err(Error::NonConvergence { max_depth: MAX_CF_DEPTH });
        }
        let (a, rem) = num.div_mod_floor(&den);
        let h = &a * &h_prev1 + &h_prev2;
        let k = &a * &k_prev1 + &k_prev2;
        if k > n_big {
            break;
        }
        let qf = k.to_f64().expect("finite denominator");
        let pf = h.to_f64().expect("finite numerator");
        let value = (n_f * (qf * y - pf).abs()).max(qf / n_f);
        if value < best {
            best = value;
        }
        h_prev2 = std::mem::replace(&mut h_prev1, h);
        k_prev2 = std::mem::replace(&mut k_prev1, k);
        num = std::mem::replace(&mut den, rem);
        depth += 1;
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    /// y drawn from a coarse dyadic grid: every quantity in the float
    /// witness scan is then exactly representable (products of grid
    /// rationals with bounded integers), so float-mode minima are exact.
    fn grid_y(rng: &mut DetRng) -> f64 {
        rng.next_below(1 << 20) as f64 / (1u64 << 20) as f64
    }

    const GOLDEN: f64 = 0.6180339887498949; // (√5 − 1)/2

    #[test]
    fn zero_target_reports_first_axis_witness() {
        for (m, n, big_n) in [(1usize, 1usize, 7u64), (2, 1, 4), (1, 2, 3), (2, 2, 3)] {
            let target = TargetMatrix::new_f64(m, n, vec![0.0; m * n]);
            let report = best_witness(&target, big_n).unwrap();
            assert_eq!(report.sigma_star, (big_n as f64).powi(-(n as i32)));
            let mut expected_q = vec![0i64; m];
            expected_q[0] = 1;
            assert_eq!(report.witness.q, expected_q);
            assert_eq!(report.witness.p, vec![0i64; n]);
            assert_eq!(report.witness.residual, 0.0);
            assert_eq!(report.witness.height, 1.0);
        }
    }

    #[test]
    fn half_target_sits_exactly_on_the_dirichlet_bound() {
        let exact = best_witness(&TargetMatrix::new_rational(1, 1, vec![rat(1, 2)]), 2).unwrap();
        assert_eq!(exact.sigma_star_exact, Some(BigRational::one()));
        assert_eq!(exact.sigma_star, 1.0);
        let float = best_witness(&TargetMatrix::new_f64(1, 1, vec![0.5]), 2).unwrap();
        assert_eq!(float.sigma_star, 1.0);
        // among the equal-quality witnesses, q = 1 is reverse-lex least
        assert_eq!(float.witness.q, vec![1]);
    }

    #[test]
    fn sigma_star_never_exceeds_one_on_grid_targets() {
        let mut rng = DetRng::new(31, 0);
        for trial in 0..200 {
            let shapes = [(1usize, 1usize), (1, 2), (2, 1), (2, 2)];
            let (m, n) = shapes[(trial % 4) as usize];
            let big_n = 2 + rng.next_below(if n == 2 { 29 } else { 29 });
            let entries: Vec<f64> = (0..m * n).map(|_| grid_y(&mut rng)).collect();
            let report = best_witness(&TargetMatrix::new_f64(m, n, entries), big_n).unwrap();
            // exact arithmetic on the grid: the bound holds with no slack
            assert!(report.sigma_star <= 1.0, "trial {trial}: {}", report.sigma_star);
            assert!(report.sigma_star > 0.0);
        }
    }

    #[test]
    fn exact_mode_bound_holds_with_no_slack() {
        let mut rng = DetRng::new(32, 0);
        for _ in 0..50 {
            let y = rat(rng.next_below(1 << 20) as i64, 1 << 20);
            let big_n = 2 + rng.next_below(20);
            let report =
                best_witness(&TargetMatrix::new_rational(1, 1, vec![y]), big_n).unwrap();
            assert!(report.sigma_star_exact.unwrap() <= BigRational::one());
        }
    }

    #[test]
    fn lattice_route_matches_direct_search() {
        let mut rng = DetRng::new(33, 0);
        for trial in 0..100 {
            let shapes = [(1usize, 1usize), (1, 2), (2, 1), (1, 3), (3, 1), (2, 2)];
            let (m, n) = shapes[trial % shapes.len()];
            let big_n = 2 + rng.next_below(if n >= 2 { 8 } else { 25 });
            let entries: Vec<f64> = (0..m * n).map(|_| rng.next_f64()).collect();
            let target = TargetMatrix::new_f64(m, n, entries);
            let direct = best_witness(&target, big_n).unwrap().sigma_star;
            let via_lattice = dirichlet_quality_via_lattice(&target, big_n).unwrap();
            assert!(
                (direct - via_lattice).abs() <= 1e-9,
                "trial {trial} ({m},{n},N={big_n}): {direct} vs {via_lattice}"
            );
        }
    }

    #[test]
    fn lattice_route_examples() {
        let zero = TargetMatrix::new_f64(1, 1, vec![0.0]);
        let v = dirichlet_quality_via_lattice(&zero, 3).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
        let half = TargetMatrix::new_f64(1, 1, vec![0.5]);
        let v = dirichlet_quality_via_lattice(&half, 2).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn continued_fraction_agrees_with_direct_search() {
        let mut rng = DetRng::new(34, 0);
        for trial in 0..200 {
            let y = rng.next_f64();
            let big_n = 2 + rng.next_below(99);
            let cf = continued_fraction_quality(y, big_n).unwrap();
            let direct = best_witness(&TargetMatrix::new_f64(1, 1, vec![y]), big_n)
                .unwrap()
                .sigma_star;
            assert!(
                (cf - direct).abs() <= 1e-9,
                "trial {trial} (y={y}, N={big_n}): {cf} vs {direct}"
            );
        }
    }

    #[test]
    fn golden_ratio_quality_matches_oracle_across_small_n() {
        for big_n in 2..=34u64 {
            let cf = continued_fraction_quality(GOLDEN, big_n).unwrap();
            let direct = best_witness(&TargetMatrix::new_f64(1, 1, vec![GOLDEN]), big_n)
                .unwrap()
                .sigma_star;
            assert!((cf - direct).abs() <= 1e-9, "N={big_n}");
        }
    }

    #[test]
    fn golden_ratio_quality_clusters_in_the_badly_approximable_band() {
        // quality at Fibonacci N stays pinned in a narrow band above
        // 5^{-1/4} ≈ 0.6687 — nothing approaches the Dirichlet bound from
        // below arbitrarily closely
        for big_n in [5u64, 8, 13, 21, 34, 55, 89, 144] {
            let v = continued_fraction_quality(GOLDEN, big_n).unwrap();
            assert!((0.6..=0.85).contains(&v), "N={big_n}: {v}");
        }
    }

    #[test]
    fn continued_fraction_examples() {
        assert_eq!(continued_fraction_quality(0.0, 7).unwrap(), 1.0 / 7.0);
        let v = continued_fraction_quality(1.0 / 3.0, 3).unwrap();
        let direct = best_witness(&TargetMatrix::new_f64(1, 1, vec![1.0 / 3.0]), 3)
            .unwrap()
            .sigma_star;
        assert!((v - direct).abs() <= 1e-9);
    }

    #[test]
    fn slowly_growing_expansion_hits_the_depth_cap() {
        // ratio of consecutive Fibonacci numbers: all quotients are 1, so
        // denominators grow as slowly as possible and 64 levels cannot
        // push them past a large N
        let mut a = BigInt::one();
        let mut b = BigInt::one();
        for _ in 0..80 {
            let next = &a + &b;
            a = std::mem::replace(&mut b, next);
        }
        let err = cf_quality_of_rational(a, b, 1_000_000_000_000_000, 0.618).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { max_depth: 64 }));
    }

    #[test]
    fn improvement_is_monotone_in_sigma() {
        let mut rng = DetRng::new(35, 0);
        for _ in 0..30 {
            let target = TargetMatrix::new_f64(1, 1, vec![grid_y(&mut rng)]);
            let big_n = 2 + rng.next_below(30);
            let mut prev = false;
            for sigma in [0.1, 0.3, 0.5, 0.7, 0.9, 0.99] {
                let holds = di_sigma_holds(&target, sigma, big_n).unwrap();
                assert!(!prev || holds, "monotonicity broken at sigma={sigma}");
                prev = holds;
            }
        }
    }

    #[test]
    fn quality_is_invariant_under_integer_translation() {
        let mut rng = DetRng::new(36, 0);
        for _ in 0..30 {
            let y = grid_y(&mut rng);
            let big_n = 2 + rng.next_below(25);
            let base = best_witness(&TargetMatrix::new_f64(1, 1, vec![y]), big_n).unwrap();
            for shift in [-2.0, 1.0, 3.0] {
                let moved =
                    best_witness(&TargetMatrix::new_f64(1, 1, vec![y + shift]), big_n)
                        .unwrap();
                // grid values keep the float scan exact, so exactly equal
                assert_eq!(base.sigma_star, moved.sigma_star);
            }
            let yr = rat(rng.next_below(997) as i64, 997);
            let base =
                best_witness(&TargetMatrix::new_rational(1, 1, vec![yr.clone()]), big_n)
                    .unwrap();
            let moved = best_witness(
                &TargetMatrix::new_rational(1, 1, vec![yr + BigRational::from(BigInt::from(5))]),
                big_n,
            )
            .unwrap();
            assert_eq!(base.sigma_star_exact, moved.sigma_star_exact);
        }
    }

    #[test]
    fn membership_examples() {
        let zero = TargetMatrix::new_f64(1, 1, vec![0.0]);
        assert!(di_sigma_holds(&zero, 0.5, 4).unwrap());
        // boundary case: sigma_star = 1/2 = sigma
        assert!(di_sigma_holds(&zero, 0.5, 2).unwrap());
        let half = TargetMatrix::new_f64(1, 1, vec![0.5]);
        assert!(!di_sigma_holds(&half, 0.9, 2).unwrap());
    }

    #[test]
    fn scan_reports_failures_and_range_verdict() {
        let zero = TargetMatrix::new_f64(1, 1, vec![0.0]);
        let scan = di_sigma_scan(&zero, 0.5, 2, 50).unwrap();
        assert!(scan.failing.is_empty());
        assert!(scan.consistent_on_range);
        assert_eq!(scan.largest_failing, None);

        let half = TargetMatrix::new_f64(1, 1, vec![0.5]);
        let scan = di_sigma_scan(&half, 0.999, 2, 20).unwrap();
        assert_eq!(scan.failing, vec![2]);
        assert_eq!(scan.largest_failing, Some(2));
        assert!(scan.consistent_on_range);

        // badly approximable: quality never drops to 0.4, every N fails
        let golden = TargetMatrix::new_f64(1, 1, vec![GOLDEN]);
        let scan = di_sigma_scan(&golden, 0.4, 2, 200).unwrap();
        assert_eq!(scan.failing.len(), 199);
        assert_eq!(scan.largest_failing, Some(200));
        assert!(!scan.consistent_on_range);
    }

    #[test]
    fn scan_failures_match_single_queries() {
        let mut rng = DetRng::new(37, 0);
        let target = TargetMatrix::new_f64(1, 1, vec![grid_y(&mut rng)]);
        let scan = di_sigma_scan(&target, 0.5, 2, 40).unwrap();
        for big_n in 2..=40u64 {
            let holds = di_sigma_holds(&target, 0.5, big_n).unwrap();
            assert_eq!(holds, !scan.failing.contains(&big_n), "N={big_n}");
        }
    }

    #[test]
    fn oversized_search_box_is_rejected() {
        let target = TargetMatrix::new_f64(2, 2, vec![0.1, 0.2, 0.3, 0.4]);
        let err = best_witness(&target, 100).unwrap_err();
        match err {
            Error::SearchBudgetExceeded { candidates, budget } => {
                assert!(candidates > budget);
                assert_eq!(budget, SEARCH_BUDGET);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn witness_vectors_reproduce_the_reported_quality() {
        let mut rng = DetRng::new(38, 0);
        for _ in 0..50 {
            let m = 1 + rng.next_below(2) as usize;
            let n = 1 + rng.next_below(2) as usize;
            let big_n = 2 + rng.next_below(8);
            let entries: Vec<f64> = (0..m * n).map(|_| rng.next_f64()).collect();
            let target = TargetMatrix::new_f64(m, n, entries.clone());
            let report = best_witness(&target, big_n).unwrap();
            let w = &report.witness;
            assert!(w.q.iter().any(|&c| c != 0));
            let mut residual: f64 = 0.0;
            for j in 0..n {
                let s: f64 =
                    (0..m).map(|i| w.q[i] as f64 * entries[i * n + j]).sum::<f64>()
                        + w.p[j] as f64;
                residual = residual.max(s.abs());
            }
            assert!((residual - w.residual).abs() <= 1e-12);
            let height = w.q.iter().map(|c| c.abs()).max().unwrap() as f64;
            assert_eq!(height, w.height);
            let value = ((big_n as f64).powi(m as i32) * residual)
                .max(height / (big_n as f64).powi(n as i32));
            assert!((value - report.sigma_star).abs() <= 1e-12);
        }
    }
}
