//! Unimodular lattices in dimension `d ≤ 5`, the diagonal flows acting on
//! them, exact shortest vectors in the sup and Euclidean norms, and orbit
//! statistics (escape fractions, Cesàro averages, pooled observables) with
//! a Haar-measure oracle for `d = 2`.
//!
//! # Exact orbit state
//!
//! Long diagonal orbits are hostile to plain floating point: the flow
//! multiplies columns by `2^{±l}`-scale factors, and a 53-bit start behaves
//! like the rational point it is — its orbit genuinely collapses into the
//! cusp once the flow has magnified the rounding grid to order one. The
//! basis here therefore keeps an exact decomposition
//!
//! ```text
//! entry(i, j) = coeffs[i][j] / col_den[j] * 2^col_log2[j]
//! ```
//!
//! with big-integer `coeffs` and `col_den`, and a per-column power-of-two
//! scale `col_log2` that the flow adjusts without touching the integers.
//! Basis reduction performs exact integer row operations (the rounded
//! Gram–Schmidt quotients are *chosen* from `f64` views, which only affects
//! reduction quality, never the lattice). The determinant of `coeffs` is
//! invariant under all of this, so unimodularity is a frozen certificate
//! rather than a quantity that drifts.
//!
//! Samplers hand orbits dyadic starting points with enough fractional bits
//! that no rational collapse is reachable within the requested step count
//! (see [`FlowElement::recommended_start_bits`]).

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{FromPrimitive, One, Signed, Zero};
use rayon::prelude::*;

use crate::analysis::{decay_exponent_fit, ExponentFit};
use crate::diophantine::TargetMatrix;
use crate::error::{Error, Result};
use crate::fractal::{DyadicPoint, ProductMeasure};
use crate::rng::DetRng;
use crate::util::{log2_big, pow2, scaled_int_to_f64, scaled_ratio_to_f64};

/// Hard cap on basis dimension for exact enumeration.
pub const MAX_DIMENSION: usize = 5;
/// Node budget for shortest-vector enumeration.
pub const ENUMERATION_BUDGET: u128 = 100_000_000;
/// Bound on the accumulated log-determinant drift of the floating view.
pub const LOG_DET_DRIFT_LIMIT: f64 = 1e-4;
/// Truncation height of the Haar oracle's fundamental-domain sampler.
pub const HAAR_Y_MAX: f64 = 1e4;

/// One-parameter diagonal flow acting on lattice bases from the right.
///
/// Both families expand the first block of coordinates and contract the
/// rest, with exponents summing to zero:
///
/// * `SplitMn`: one step multiplies the first `n` columns by `N^m` and the
///   last `m` columns by `N^{-n}` (the step is the inverse of
///   `diag(N^{-m} I_n, N^{n} I_m)`).
/// * `Klw`: one step multiplies the first `n` columns by `e^t` and the
///   last column by `e^{-nt}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlowElement {
    SplitMn { m: usize, n: usize, big_n: u32 },
    Klw { n: usize, t: f64 },
}

impl FlowElement {
    /// Split-family element with expansion base `N`.
    ///
    /// # Panics
    ///
    /// Panics if `m`, `n`, or `big_n` is zero, or `m + n > 5`.
    pub fn new_split(m: usize, n: usize, big_n: u32) -> Self {
        assert!(m >= 1 && n >= 1 && big_n >= 1, "need m, n, N >= 1");
        assert!(m + n <= MAX_DIMENSION, "dimension {} too large", m + n);
        FlowElement::SplitMn { m, n, big_n }
    }

    /// Continuous-time family with `n` expanding directions and time
    /// step `t`.
    ///
    /// # Panics
    ///
    /// Panics if `n == 0`, `n + 1 > 5`, or `t <= 0`.
    pub fn new_klw(n: usize, t: f64) -> Self {
        assert!(n >= 1 && n + 1 <= MAX_DIMENSION, "need 1 <= n <= 4");
        assert!(t > 0.0 && t.is_finite(), "need t > 0");
        FlowElement::Klw { n, t }
    }

    /// Ambient dimension `d` of the lattices this flow acts on.
    pub fn dimension(&self) -> usize {
        match self {
            FlowElement::SplitMn { m, n, .. } => m + n,
            FlowElement::Klw { n, .. } => n + 1,
        }
    }

    /// Rows of the embedded target matrix (`m`, with `Klw` acting as
    /// `m = 1`).
    pub fn target_rows(&self) -> usize {
        match self {
            FlowElement::SplitMn { m, .. } => *m,
            FlowElement::Klw { .. } => 1,
        }
    }

    /// Columns of the embedded target matrix.
    pub fn target_cols(&self) -> usize {
        match self {
            FlowElement::SplitMn { n, .. } => *n,
            FlowElement::Klw { n, .. } => *n,
        }
    }

    /// Per-column `log2` increments of one forward step. Exponent sums
    /// vanish, so the determinant is untouched.
    fn col_rates_log2(&self) -> Vec<f64> {
        match self {
            FlowElement::SplitMn { m, n, big_n } => {
                let l = (*big_n as f64).log2();
                let mut rates = vec![*m as f64 * l; *n];
                rates.extend(std::iter::repeat(-(*n as f64) * l).take(*m));
                rates
            }
            FlowElement::Klw { n, t } => {
                let l = t * std::f64::consts::LOG2_E;
                let mut rates = vec![l; *n];
                rates.push(-(*n as f64) * l);
                rates
            }
        }
    }

    /// Fractional bits a dyadic starting point needs so that no lattice
    /// vector can vanish within `k` steps: heights explored by step `k`
    /// stay below `2^{k·r}` (`r` the larger of the two block rates), so a
    /// start on a strictly finer dyadic grid cannot be annihilated. A
    /// 128-bit margin covers constants.
    pub fn recommended_start_bits(&self, k: usize) -> u32 {
        let rate = match self {
            FlowElement::SplitMn { m, n, big_n } => {
                (*big_n as f64).log2() * (*m).max(*n) as f64
            }
            FlowElement::Klw { n, t } => t * std::f64::consts::LOG2_E * *n as f64,
        };
        (k as f64 * rate).ceil() as u32 + 128
    }
}

/// Basis of a lattice in `R^d`, stored exactly (see the module notes) with
/// a cached `f64` view of the rows.
#[derive(Debug, Clone)]
pub struct LatticeBasis {
    d: usize,
    coeffs: Vec<BigInt>,
    col_den: Vec<BigInt>,
    col_den_one: Vec<bool>,
    col_log2: Vec<f64>,
    rows: Vec<f64>,
    det_coeffs_abs: BigInt,
    base_col_log2_sum: f64,
    log_det_drift: f64,
    steps_taken: u64,
}

impl LatticeBasis {
    fn assemble(d: usize, coeffs: Vec<BigInt>, col_den: Vec<BigInt>, col_log2: Vec<f64>) -> Self {
        assert!(d >= 1 && d <= MAX_DIMENSION, "dimension {d} out of range");
        assert_eq!(coeffs.len(), d * d);
        assert_eq!(col_den.len(), d);
        assert_eq!(col_log2.len(), d);
        for den in &col_den {
            assert!(den.is_positive(), "column denominators must be positive");
        }
        let det = det_bigint(&coeffs, d);
        assert!(!det.is_zero(), "basis rows are linearly dependent");
        let col_den_one: Vec<bool> = col_den.iter().map(|x| x.is_one()).collect();
        let base_col_log2_sum = col_log2.iter().sum();
        let mut basis = LatticeBasis {
            d,
            coeffs,
            col_den,
            col_den_one,
            col_log2,
            rows: vec![0.0; d * d],
            det_coeffs_abs: det.abs(),
            base_col_log2_sum,
            log_det_drift: 0.0,
            steps_taken: 0,
        };
        basis.refresh_all_views();
        basis
    }

    /// Embeds arbitrary finite `f64` rows exactly: every entry is the
    /// dyadic rational it already is, with per-column power-of-two
    /// denominators.
    ///
    /// # Panics
    ///
    /// Panics on non-finite entries, a length that is not `d²`, or
    /// linearly dependent rows.
    pub fn from_f64_rows(rows: &[f64], d: usize) -> Self {
        assert_eq!(rows.len(), d * d, "expected {d}x{d} row-major entries");
        let decoded: Vec<(BigInt, i64)> = rows.iter().map(|&x| decode_f64(x)).collect();
        let mut col_log2 = vec![0.0f64; d];
        let mut shift = vec![0i64; d];
        for j in 0..d {
            let s = (0..d)
                .filter(|&i| !decoded[i * d + j].0.is_zero())
                .map(|i| -decoded[i * d + j].1)
                .max()
                .unwrap_or(0)
                .max(0);
            shift[j] = s;
            col_log2[j] = -(s as f64);
        }
        let mut coeffs = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                let (mant, exp) = &decoded[i * d + j];
                if mant.is_zero() {
                    coeffs.push(BigInt::zero());
                } else {
                    coeffs.push(mant.clone() << (exp + shift[j]) as usize);
                }
            }
        }
        Self::assemble(d, coeffs, vec![BigInt::one(); d], col_log2)
    }

    /// Ambient dimension.
    pub fn dimension(&self) -> usize {
        self.d
    }

    /// Row-major `f64` view of the basis rows.
    pub fn rows_f64(&self) -> &[f64] {
        &self.rows
    }

    /// Accumulated `|log |det||` drift of the floating view relative to
    /// construction. Stays at rounding scale unless something is broken.
    pub fn log_det_drift(&self) -> f64 {
        self.log_det_drift
    }

    /// `|det|` of the current basis, computed from the exact state.
    pub fn det_abs(&self) -> f64 {
        let log2_det = log2_big(&self.det_coeffs_abs)
            - self.col_den.iter().map(log2_big).sum::<f64>()
            + self.col_log2.iter().sum::<f64>();
        pow2(log2_det.round() as i64) * (log2_det - log2_det.round()).exp2()
    }

    fn view_entry(&self, i: usize, j: usize) -> f64 {
        let c = &self.coeffs[i * self.d + j];
        if self.col_den_one[j] {
            scaled_int_to_f64(c, self.col_log2[j])
        } else {
            scaled_ratio_to_f64(c, &self.col_den[j], self.col_log2[j])
        }
    }

    fn refresh_row_view(&mut self, i: usize) {
        for j in 0..self.d {
            self.rows[i * self.d + j] = self.view_entry(i, j);
        }
    }

    fn refresh_all_views(&mut self) {
        for i in 0..self.d {
            self.refresh_row_view(i);
        }
    }

    fn row_norm2(&self, i: usize) -> f64 {
        self.rows[i * self.d..(i + 1) * self.d].iter().map(|v| v * v).sum()
    }

    fn row_dot(&self, a: usize, b: usize) -> f64 {
        (0..self.d).map(|j| self.rows[a * self.d + j] * self.rows[b * self.d + j]).sum()
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for j in 0..self.d {
            self.coeffs.swap(a * self.d + j, b * self.d + j);
            self.rows.swap(a * self.d + j, b * self.d + j);
        }
    }

    /// `row[target] -= mu * row[source]` on the exact integers, view
    /// refreshed.
    fn row_op(&mut self, target: usize, source: usize, mu: &BigInt) {
        if mu.is_zero() {
            return;
        }
        for j in 0..self.d {
            let delta = mu * &self.coeffs[source * self.d + j];
            self.coeffs[target * self.d + j] -= delta;
        }
        self.refresh_row_view(target);
    }

    /// Reduces the basis (exact integer row operations, quotients chosen
    /// from the floating view): Gauss/Lagrange for `d = 2`, size reduction
    /// with norm-ordered swaps for `d ≤ 5`. The lattice is untouched.
    pub fn reduce(&mut self) {
        if self.d == 2 {
            self.reduce_lagrange();
        } else if self.d > 2 {
            self.reduce_general();
        }
    }

    fn reduce_lagrange(&mut self) {
        for _ in 0..64 {
            if self.row_norm2(0) > self.row_norm2(1) {
                self.swap_rows(0, 1);
            }
            let n0 = self.row_norm2(0);
            if n0 == 0.0 {
                break;
            }
            let mu = round_ties_to_zero(self.row_dot(1, 0) / n0);
            if mu == 0.0 {
                break;
            }
            let mu_int = BigInt::from_f64(mu).expect("finite quotient");
            self.row_op(1, 0, &mu_int);
        }
        if self.row_norm2(0) > self.row_norm2(1) {
            self.swap_rows(0, 1);
        }
    }

    fn reduce_general(&mut self) {
        let d = self.d;
        'passes: for _ in 0..200 {
            let (mut mu, bstar2) = gram_schmidt(&self.rows, d);
            // size reduction with locally maintained quotients
            for i in 1..d {
                for j in (0..i).rev() {
                    let r = round_ties_to_zero(mu[i][j]);
                    if r != 0.0 {
                        let r_int = BigInt::from_f64(r).expect("finite quotient");
                        self.row_op(i, j, &r_int);
                        for jj in 0..j {
                            mu[i][jj] -= r * mu[j][jj];
                        }
                        mu[i][j] -= r;
                    }
                }
            }
            // norm-ordered swap pass (Lovász-style with a 0.99 slack)
            let (mu, bstar2_new) = gram_schmidt(&self.rows, d);
            let _ = bstar2;
            for i in 0..d - 1 {
                let lhs = bstar2_new[i + 1];
                let rhs = (0.99 - mu[i + 1][i] * mu[i + 1][i]) * bstar2_new[i];
                if lhs < rhs {
                    self.swap_rows(i, i + 1);
                    continue 'passes;
                }
            }
            break;
        }
    }

    /// Walks the flow `l` single steps (negative `l` runs backwards),
    /// reducing after each step and monitoring the view's determinant
    /// drift. Column scales move; the exact integers only change through
    /// reduction, so repeated single steps compose exactly with one
    /// `l`-step up to the basis representative.
    ///
    /// # Errors
    ///
    /// [`Error::NumericalBlowup`] if the accumulated drift exceeds
    /// [`LOG_DET_DRIFT_LIMIT`].
    ///
    /// # Panics
    ///
    /// Panics if the flow's dimension differs from the basis dimension.
    pub fn flow_step_in_place(&mut self, flow: &FlowElement, l: i64) -> Result<()> {
        assert_eq!(
            flow.dimension(),
            self.d,
            "flow dimension {} does not match basis dimension {}",
            flow.dimension(),
            self.d
        );
        if l == 0 {
            self.reduce();
            return Ok(());
        }
        let rates = flow.col_rates_log2();
        let sign = if l > 0 { 1.0 } else { -1.0 };
        for _ in 0..l.unsigned_abs() {
            for j in 0..self.d {
                self.col_log2[j] += sign * rates[j];
            }
            self.steps_taken += 1;
            if self.steps_taken % 64 == 0 {
                self.refresh_all_views();
            } else {
                // cheap column rescale of the cached view
                for j in 0..self.d {
                    let f = (sign * rates[j]).exp2();
                    for i in 0..self.d {
                        self.rows[i * self.d + j] *= f;
                    }
                }
            }
            self.reduce();
            let sum: f64 = self.col_log2.iter().sum();
            self.log_det_drift =
                (sum - self.base_col_log2_sum).abs() * std::f64::consts::LN_2;
            if self.log_det_drift > LOG_DET_DRIFT_LIMIT {
                return Err(Error::NumericalBlowup {
                    drift: self.log_det_drift,
                    limit: LOG_DET_DRIFT_LIMIT,
                });
            }
            if self.steps_taken % 1024 == 0 {
                let det = det_bigint(&self.coeffs, self.d);
                assert_eq!(
                    det.abs(),
                    self.det_coeffs_abs,
                    "internal error: reduction changed the determinant certificate"
                );
            }
        }
        Ok(())
    }

    /// `(λ1 in sup norm, λ1 in Euclidean norm)` of the current basis.
    ///
    /// # Errors
    ///
    /// Propagates enumeration failures in dimensions above 2.
    pub fn lambda1_pair(&self) -> Result<(f64, f64)> {
        if self.d == 2 {
            let mut b = self.clone();
            b.reduce();
            Ok(lambda1_pair_reduced_2d(&b.rows))
        } else {
            let sup = shortest_vector(self, NormKind::Sup)?.length;
            let euc = shortest_vector(self, NormKind::Euclidean)?.length;
            Ok((sup, euc))
        }
    }

    #[cfg(test)]
    fn transformed_by(&self, u_rows: &[i64]) -> LatticeBasis {
        // test helper: apply an integer row transform (must be unimodular)
        assert_eq!(u_rows.len(), self.d * self.d);
        let mut coeffs = vec![BigInt::zero(); self.d * self.d];
        for i in 0..self.d {
            for j in 0..self.d {
                let mut acc = BigInt::zero();
                for k in 0..self.d {
                    acc += BigInt::from(u_rows[i * self.d + k]) * &self.coeffs[k * self.d + j];
                }
                coeffs[i * self.d + j] = acc;
            }
        }
        LatticeBasis::assemble(self.d, coeffs, self.col_den.clone(), self.col_log2.clone())
    }

    #[cfg(test)]
    fn inject_scale_drift(&mut self, amount: f64) {
        // test helper: corrupt a column scale to exercise the drift guard
        self.col_log2[0] += amount;
    }
}

/// `x` rounded to the nearest integer with half-way cases toward zero, so
/// that reduction loops terminate when a quotient sits exactly on `±1/2`.
fn round_ties_to_zero(x: f64) -> f64 {
    let r = x.round();
    if (r - x).abs() == 0.5 {
        r - r.signum()
    } else {
        r
    }
}

/// Exact mantissa/exponent split of a finite `f64`: `x = mant · 2^exp`.
fn decode_f64(x: f64) -> (BigInt, i64) {
    assert!(x.is_finite(), "basis entries must be finite");
    if x == 0.0 {
        return (BigInt::zero(), 0);
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { -1 } else { 1 };
    let exp_field = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (mant, exp) = if exp_field == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), exp_field - 1075)
    };
    let tz = mant.trailing_zeros() as i64;
    (BigInt::from(sign * ((mant >> tz) as i64)), exp + tz)
}

/// Exact determinant of a `d×d` big-integer matrix (fraction-free
/// Gaussian elimination).
fn det_bigint(mat: &[BigInt], d: usize) -> BigInt {
    let mut a = mat.to_vec();
    let mut sign = 1i32;
    let mut prev = BigInt::one();
    for k in 0..d {
        if a[k * d + k].is_zero() {
            let swap = (k + 1..d).find(|&r| !a[r * d + k].is_zero());
            match swap {
                Some(r) => {
                    for j in 0..d {
                        a.swap(k * d + j, r * d + j);
                    }
                    sign = -sign;
                }
                None => return BigInt::zero(),
            }
        }
        for i in k + 1..d {
            for j in k + 1..d {
                let num = &a[i * d + j] * &a[k * d + k] - &a[i * d + k] * &a[k * d + j];
                a[i * d + j] = num / &prev;
            }
            a[i * d + k] = BigInt::zero();
        }
        prev = a[k * d + k].clone();
    }
    let det = a[(d - 1) * d + (d - 1)].clone();
    if sign < 0 {
        -det
    } else {
        det
    }
}

/// Gram–Schmidt data of row vectors: (`mu` lower-triangular quotients,
/// squared lengths of the orthogonalized rows).
fn gram_schmidt(rows: &[f64], d: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut mu = vec![vec![0.0; d]; d];
    let mut bstar = vec![vec![0.0; d]; d];
    let mut bstar2 = vec![0.0; d];
    for i in 0..d {
        let mut v: Vec<f64> = rows[i * d..(i + 1) * d].to_vec();
        for j in 0..i {
            let dot: f64 = (0..d).map(|t| rows[i * d + t] * bstar[j][t]).sum();
            let m = if bstar2[j] > 0.0 { dot / bstar2[j] } else { 0.0 };
            mu[i][j] = m;
            for t in 0..d {
                v[t] -= m * bstar[j][t];
            }
        }
        bstar2[i] = v.iter().map(|x| x * x).sum();
        bstar[i] = v;
    }
    (mu, bstar2)
}

/// Which norm a shortest-vector query minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    Sup,
    Euclidean,
}

/// A shortest nonzero lattice vector: integer coefficients relative to the
/// queried basis rows, the vector itself, and its length.
#[derive(Debug, Clone, PartialEq)]
pub struct ShortestVector {
    pub coefficients: Vec<i64>,
    pub vector: Vec<f64>,
    pub length: f64,
}

/// Exact shortest nonzero vector of the lattice in the requested norm.
///
/// The query basis is reduced first (tracking the integer transform so
/// coefficients refer to the *input* rows), then integer coefficients are
/// enumerated inside the Gram–Schmidt box of the Euclidean bound; sup-norm
/// queries re-enumerate inside radius `√d ·` (Euclidean minimum), which
/// must contain the sup minimizer. Among equal-length minimizers the tie
/// goes to the vector supported on the earliest basis rows (absolute
/// coefficients compared last-coordinate-first after normalizing the
/// leading sign positive, then signs), so `Z^d` reports `e_1`.
///
/// # Errors
///
/// [`Error::EnumerationOverflow`] if the search tree exceeds
/// [`ENUMERATION_BUDGET`] nodes; [`Error::UnsupportedDimension`] above
/// dimension 5.
pub fn shortest_vector(basis: &LatticeBasis, norm: NormKind) -> Result<ShortestVector> {
    enumerate_shortest(basis.rows_f64(), basis.dimension(), norm)
}

fn enumerate_shortest(input_rows: &[f64], d: usize, norm: NormKind) -> Result<ShortestVector> {
    if d > MAX_DIMENSION {
        return Err(Error::UnsupportedDimension {
            dim: d,
            reason: "shortest-vector enumeration is configured up to dimension 5".into(),
        });
    }
    // Local reduction on f64 copies with a tracked integer transform, so
    // reported coefficients refer to the caller's rows.
    let mut rows = input_rows.to_vec();
    let mut u: Vec<i128> = vec![0; d * d];
    for i in 0..d {
        u[i * d + i] = 1;
    }
    reduce_f64_tracked(&mut rows, &mut u, d);

    let mut budget = ENUMERATION_BUDGET;
    let (_, euc_best) = enumerate_pass(&rows, &u, input_rows, d, NormKind::Euclidean, {
        let r2: f64 = rows[0..d].iter().map(|v| v * v).sum();
        r2 * (1.0 + 1e-12)
    }, &mut budget)?;
    let euc_best = euc_best.expect("row 0 lies inside its own radius");
    if norm == NormKind::Euclidean {
        return Ok(euc_best);
    }
    let radius2 = d as f64 * euc_best.length * euc_best.length * (1.0 + 1e-9);
    let (_, sup_best) =
        enumerate_pass(&rows, &u, input_rows, d, NormKind::Sup, radius2, &mut budget)?;
    Ok(sup_best.expect("Euclidean minimizer lies inside the sup search radius"))
}

/// Depth-first enumeration of all coefficient vectors whose Euclidean
/// length is at most `radius2`, keeping the best candidate in `norm`.
fn enumerate_pass(
    rows: &[f64],
    u: &[i128],
    input_rows: &[f64],
    d: usize,
    norm: NormKind,
    radius2: f64,
    budget: &mut u128,
) -> Result<(u128, Option<ShortestVector>)> {
    let (mu, bstar2) = gram_schmidt(rows, d);
    for &b2 in &bstar2 {
        assert!(b2 > 0.0, "degenerate basis in enumeration");
    }
    let mut coeff = vec![0i64; d];
    let mut best: Option<(f64, Vec<i64>, Vec<f64>)> = None;
    let mut nodes = 0u128;
    enumerate_level(
        rows, u, input_rows, d, norm, radius2, &mu, &bstar2, &mut coeff, d, 0.0, &mut best,
        &mut nodes, budget,
    )?;
    Ok((nodes, best.map(|(length, coefficients, vector)| ShortestVector {
        coefficients,
        vector,
        length,
    })))
}

#[allow(clippy::too_many_arguments)]
fn enumerate_level(
    rows: &[f64],
    u: &[i128],
    input_rows: &[f64],
    d: usize,
    norm: NormKind,
    radius2: f64,
    mu: &[Vec<f64>],
    bstar2: &[f64],
    coeff: &mut Vec<i64>,
    level: usize,
    partial: f64,
    best: &mut Option<(f64, Vec<i64>, Vec<f64>)>,
    nodes: &mut u128,
    budget: &mut u128,
) -> Result<()> {
    if level == 0 {
        if coeff.iter().all(|&c| c == 0) {
            return Ok(());
        }
        // Map back to the input basis and evaluate there.
        let mut input_coeff = vec![0i64; d];
        for j in 0..d {
            let mut acc: i128 = 0;
            for i in 0..d {
                acc += coeff[i] as i128 * u[i * d + j];
            }
            input_coeff[j] = i64::try_from(acc).expect("coefficient fits in i64");
        }
        let mut vector = vec![0.0f64; d];
        for (i, &c) in input_coeff.iter().enumerate() {
            for t in 0..d {
                vector[t] += c as f64 * input_rows[i * d + t];
            }
        }
        let length = match norm {
            NormKind::Euclidean => vector.iter().map(|v| v * v).sum::<f64>().sqrt(),
            NormKind::Sup => vector.iter().fold(0.0f64, |a, v| a.max(v.abs())),
        };
        normalize_sign(&mut input_coeff, &mut vector);
        let replace = match best {
            None => true,
            Some((blen, bcoeff, _)) => {
                length < *blen || (length == *blen && rev_lex_less(&input_coeff, bcoeff))
            }
        };
        if replace {
            *best = Some((length, input_coeff, vector));
        }
        return Ok(());
    }
    let i = level - 1;
    let center: f64 = (level..d).map(|k| coeff[k] as f64 * mu[k][i]).sum();
    let room = ((radius2 - partial) / bstar2[i]).max(0.0).sqrt();
    let lo = (-center - room).ceil() as i64;
    let hi = (-center + room).floor() as i64;
    for c in lo..=hi {
        *nodes += 1;
        if *nodes > *budget {
            return Err(Error::EnumerationOverflow {
                points: *nodes,
                budget: ENUMERATION_BUDGET,
            });
        }
        coeff[i] = c;
        let offset = c as f64 + center;
        let next_partial = partial + offset * offset * bstar2[i];
        if next_partial <= radius2 {
            enumerate_level(
                rows, u, input_rows, d, norm, radius2, mu, bstar2, coeff, i, next_partial,
                best, nodes, budget,
            )?;
        }
    }
    coeff[i] = 0;
    Ok(())
}

/// First nonzero coefficient made positive (negating the vector with it).
fn normalize_sign(coeff: &mut [i64], vector: &mut [f64]) {
    if let Some(&lead) = coeff.iter().find(|&&c| c != 0) {
        if lead < 0 {
            for c in coeff.iter_mut() {
                *c = -*c;
            }
            for v in vector.iter_mut() {
                *v = -*v;
            }
        }
    }
}

/// Tie order on sign-normalized coefficient vectors: absolute values are
/// compared reading from the last coordinate to the first (so a minimizer
/// supported on earlier basis rows wins), with the signed comparison as a
/// final tie-break among equal absolute profiles.
pub(crate) fn rev_lex_less(a: &[i64], b: &[i64]) -> bool {
    for j in (0..a.len()).rev() {
        let (aa, ba) = (a[j].abs(), b[j].abs());
        if aa != ba {
            return aa < ba;
        }
    }
    for j in (0..a.len()).rev() {
        if a[j] != b[j] {
            return a[j] < b[j];
        }
    }
    false
}

/// In-place reduction of `f64` rows with the integer transform mirrored in
/// `u` (row-major, `u · input = rows`).
fn reduce_f64_tracked(rows: &mut [f64], u: &mut [i128], d: usize) {
    let norm2 = |rows: &[f64], i: usize| -> f64 {
        rows[i * d..(i + 1) * d].iter().map(|v| v * v).sum()
    };
    let row_op = |rows: &mut [f64], u: &mut [i128], t: usize, s: usize, q: f64| {
        for j in 0..d {
            rows[t * d + j] -= q * rows[s * d + j];
        }
        let qi = q as i128;
        for j in 0..d {
            u[t * d + j] -= qi * u[s * d + j];
        }
    };
    let swap = |rows: &mut [f64], u: &mut [i128], a: usize, b: usize| {
        for j in 0..d {
            rows.swap(a * d + j, b * d + j);
            u.swap(a * d + j, b * d + j);
        }
    };
    if d == 1 {
        return;
    }
    if d == 2 {
        for _ in 0..64 {
            if norm2(rows, 0) > norm2(rows, 1) {
                swap(rows, u, 0, 1);
            }
            let n0 = norm2(rows, 0);
            if n0 == 0.0 {
                break;
            }
            let dot: f64 = (0..d).map(|j| rows[d + j] * rows[j]).sum();
            let q = round_ties_to_zero(dot / n0);
            if q == 0.0 {
                break;
            }
            row_op(rows, u, 1, 0, q);
        }
        if norm2(rows, 0) > norm2(rows, 1) {
            swap(rows, u, 0, 1);
        }
        return;
    }
    'passes: for _ in 0..200 {
        let (mut mu, _) = gram_schmidt(rows, d);
        for i in 1..d {
            for j in (0..i).rev() {
                let r = round_ties_to_zero(mu[i][j]);
                if r != 0.0 {
                    row_op(rows, u, i, j, r);
                    for jj in 0..j {
                        mu[i][jj] -= r * mu[j][jj];
                    }
                    mu[i][j] -= r;
                }
            }
        }
        let (mu, bstar2) = gram_schmidt(rows, d);
        for i in 0..d - 1 {
            if bstar2[i + 1] < (0.99 - mu[i + 1][i] * mu[i + 1][i]) * bstar2[i] {
                swap(rows, u, i, i + 1);
                continue 'passes;
            }
        }
        break;
    }
}

/// `(λ1 sup, λ1 Euclidean)` of a reduced 2-D basis given as 4 row-major
/// entries. For a Lagrange-reduced basis the first row is the Euclidean
/// minimizer, and both minimizers have coefficients in `{-2,…,2}²` (a
/// cushion over the provable `{-1,0,1}` box).
fn lambda1_pair_reduced_2d(rows: &[f64]) -> (f64, f64) {
    let euc = (rows[0] * rows[0] + rows[1] * rows[1]).sqrt();
    let mut sup = f64::INFINITY;
    for c0 in -2i32..=2 {
        for c1 in -2i32..=2 {
            if c0 == 0 && c1 == 0 {
                continue;
            }
            let x = c0 as f64 * rows[0] + c1 as f64 * rows[2];
            let y = c0 as f64 * rows[1] + c1 as f64 * rows[3];
            let s = x.abs().max(y.abs());
            if s < sup {
                sup = s;
            }
        }
    }
    (sup, euc)
}

/// Embeds a target matrix `Y` as the row basis `[[I_n, 0], [Y, I_m]]`,
/// exactly (rational entries keep their denominators per column; float
/// entries embed as the dyadic rationals they are). The determinant is 1
/// by the triangular block shape.
pub fn phi_embed(target: &TargetMatrix) -> LatticeBasis {
    let m = target.rows();
    let n = target.cols();
    let d = m + n;
    assert!(d <= MAX_DIMENSION, "dimension {d} out of range");
    match target {
        TargetMatrix::F64 { entries, .. } => {
            let mut shift = vec![0i64; n];
            let decoded: Vec<(BigInt, i64)> = entries.iter().map(|&x| decode_f64(x)).collect();
            for j in 0..n {
                shift[j] = (0..m)
                    .filter(|&i| !decoded[i * n + j].0.is_zero())
                    .map(|i| -decoded[i * n + j].1)
                    .max()
                    .unwrap_or(0)
                    .max(0);
            }
            let mut coeffs = vec![BigInt::zero(); d * d];
            let mut col_log2 = vec![0.0f64; d];
            for j in 0..n {
                col_log2[j] = -(shift[j] as f64);
                coeffs[j * d + j] = BigInt::one() << shift[j] as usize;
            }
            for i in 0..m {
                coeffs[(n + i) * d + (n + i)] = BigInt::one();
                for j in 0..n {
                    let (mant, exp) = &decoded[i * n + j];
                    if !mant.is_zero() {
                        coeffs[(n + i) * d + j] = mant.clone() << (exp + shift[j]) as usize;
                    }
                }
            }
            LatticeBasis::assemble(d, coeffs, vec![BigInt::one(); d], col_log2)
        }
        TargetMatrix::Rational { entries, .. } => {
            let mut col_den = vec![BigInt::one(); d];
            for j in 0..n {
                let mut den = BigInt::one();
                for i in 0..m {
                    den = den.lcm(entries[i * n + j].denom());
                }
                col_den[j] = den;
            }
            let mut coeffs = vec![BigInt::zero(); d * d];
            for j in 0..n {
                coeffs[j * d + j] = col_den[j].clone();
            }
            for i in 0..m {
                coeffs[(n + i) * d + (n + i)] = BigInt::one();
                for j in 0..n {
                    let e = &entries[i * n + j];
                    coeffs[(n + i) * d + j] = e.numer() * (&col_den[j] / e.denom());
                }
            }
            LatticeBasis::assemble(d, coeffs, col_den, vec![0.0; d])
        }
    }
}

/// Embeds a dyadic sample point as the `m×n` target of [`phi_embed`],
/// exactly: coordinate `i·n + j` becomes entry `(i, j)`.
///
/// # Panics
///
/// Panics if the point has other than `m·n` coordinates.
pub fn phi_embed_dyadic(point: &DyadicPoint, m: usize, n: usize) -> LatticeBasis {
    assert_eq!(point.numerators.len(), m * n, "point does not fill an {m}x{n} target");
    let d = m + n;
    assert!(d <= MAX_DIMENSION, "dimension {d} out of range");
    let bits = point.bits as usize;
    let mut coeffs = vec![BigInt::zero(); d * d];
    let mut col_log2 = vec![0.0f64; d];
    for j in 0..n {
        col_log2[j] = -(point.bits as f64);
        coeffs[j * d + j] = BigInt::one() << bits;
    }
    for i in 0..m {
        coeffs[(n + i) * d + (n + i)] = BigInt::one();
        for j in 0..n {
            coeffs[(n + i) * d + j] = BigInt::from(point.numerators[i * n + j].clone());
        }
    }
    LatticeBasis::assemble(d, coeffs, vec![BigInt::one(); d], col_log2)
}

/// Functional flow application: `l` single steps of `flow` applied to a
/// copy of `basis`. See [`LatticeBasis::flow_step_in_place`].
///
/// # Errors
///
/// [`Error::NumericalBlowup`] as in the in-place variant.
pub fn flow_step(basis: &LatticeBasis, flow: &FlowElement, l: i64) -> Result<LatticeBasis> {
    let mut b = basis.clone();
    b.flow_step_in_place(flow, l)?;
    Ok(b)
}

/// Whether the lattice lies in the thick part `{λ1 in Euclidean norm ≥ ε}`.
///
/// # Errors
///
/// Propagates enumeration failures.
pub fn in_f_epsilon(basis: &LatticeBasis, eps: f64) -> Result<bool> {
    Ok(basis.lambda1_pair()?.1 >= eps)
}

/// Whether the lattice lies in `{λ1 in sup norm > σ}` (strict).
///
/// # Errors
///
/// Propagates enumeration failures.
pub fn k_sigma_member(basis: &LatticeBasis, sigma: f64) -> Result<bool> {
    Ok(basis.lambda1_pair()?.0 > sigma)
}

/// Observables evaluated along orbits from the `(λ1 sup, λ1 Euclidean)`
/// pair of each visited lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestFunction {
    /// `λ1` in the sup norm.
    Lambda1Sup,
    /// `λ1` in the Euclidean norm.
    Lambda1Euc,
    /// Indicator of the thick part: `1` when `λ1^E ≥ ε`.
    FEpsIndicator { eps: f64 },
    /// Indicator of `λ1^sup > σ` (strict).
    KSigmaIndicator { sigma: f64 },
    /// Piecewise-linear surrogate of the `σ`-indicator: `0` below
    /// `σ - width`, `1` at `σ`, linear in between.
    KSigmaBump { sigma: f64, width: f64 },
}

impl TestFunction {
    /// Evaluates the observable on a lattice's `λ1` pair.
    pub fn evaluate(&self, lambda1_sup: f64, lambda1_euc: f64) -> f64 {
        match *self {
            TestFunction::Lambda1Sup => lambda1_sup,
            TestFunction::Lambda1Euc => lambda1_euc,
            TestFunction::FEpsIndicator { eps } => {
                if lambda1_euc >= eps {
                    1.0
                } else {
                    0.0
                }
            }
            TestFunction::KSigmaIndicator { sigma } => {
                if lambda1_sup > sigma {
                    1.0
                } else {
                    0.0
                }
            }
            TestFunction::KSigmaBump { sigma, width } => {
                ((lambda1_sup - (sigma - width)) / width).clamp(0.0, 1.0)
            }
        }
    }
}

/// Per-step record of one orbit: `λ1` in both norms at steps
/// `l = 0, …, k-1`, with the grids against which membership flags are
/// reported.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitStatistics {
    pub k: usize,
    pub lambda1_sup: Vec<f64>,
    pub lambda1_euc: Vec<f64>,
    pub eps_grid: Vec<f64>,
    pub sigma_grid: Vec<f64>,
}

impl OrbitStatistics {
    /// Thick-part flags per step for one `ε` (true when `λ1^E ≥ ε`).
    pub fn f_eps_flags(&self, eps: f64) -> Vec<bool> {
        self.lambda1_euc.iter().map(|&v| v >= eps).collect()
    }

    /// Strict `λ1^sup > σ` flags per step.
    pub fn k_sigma_flags(&self, sigma: f64) -> Vec<bool> {
        self.lambda1_sup.iter().map(|&v| v > sigma).collect()
    }

    /// Running Cesàro averages `(1/k') Σ_{l<k'} f` of an observable.
    pub fn cesaro_partial_averages(&self, f: &TestFunction) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.k);
        let mut sum = 0.0;
        for l in 0..self.k {
            sum += f.evaluate(self.lambda1_sup[l], self.lambda1_euc[l]);
            out.push(sum / (l + 1) as f64);
        }
        out
    }
}

/// Runs one orbit for `k` steps, visiting `(l, λ1_sup, λ1_euc)` at each
/// step before advancing.
fn run_orbit<F: FnMut(usize, f64, f64)>(
    mut basis: LatticeBasis,
    flow: &FlowElement,
    k: usize,
    visit: &mut F,
) -> Result<()> {
    basis.reduce();
    for l in 0..k {
        let (sup, euc) = if basis.d == 2 {
            lambda1_pair_reduced_2d(&basis.rows)
        } else {
            basis.lambda1_pair()?
        };
        visit(l, sup, euc);
        if l + 1 < k {
            basis.flow_step_in_place(flow, 1)?;
        }
    }
    Ok(())
}

/// Full orbit trace of one starting lattice.
///
/// # Errors
///
/// Propagates flow and enumeration failures.
pub fn single_orbit_statistics(
    start: &LatticeBasis,
    flow: &FlowElement,
    k: usize,
    eps_grid: &[f64],
    sigma_grid: &[f64],
) -> Result<OrbitStatistics> {
    let mut sup = Vec::with_capacity(k);
    let mut euc = Vec::with_capacity(k);
    run_orbit(start.clone(), flow, k, &mut |_, s, e| {
        sup.push(s);
        euc.push(e);
    })?;
    Ok(OrbitStatistics {
        k,
        lambda1_sup: sup,
        lambda1_euc: euc,
        eps_grid: eps_grid.to_vec(),
        sigma_grid: sigma_grid.to_vec(),
    })
}

/// Draws a starting lattice for a `k`-step orbit: a dyadic sample of
/// `measure` (at the precision [`FlowElement::recommended_start_bits`]
/// demands) embedded as a target matrix.
pub fn sample_start_basis(
    measure: &ProductMeasure,
    flow: &FlowElement,
    k: usize,
    rng: &mut DetRng,
) -> LatticeBasis {
    let bits = flow.recommended_start_bits(k);
    let point = measure.sample_dyadic(rng, bits);
    phi_embed_dyadic(&point, flow.target_rows(), flow.target_cols())
}

fn check_measure_matches_flow(measure: &ProductMeasure, flow: &FlowElement) {
    assert_eq!(
        measure.dimension_count(),
        flow.target_rows() * flow.target_cols(),
        "measure dimension must fill the flow's target matrix"
    );
}

/// One row of an escape report.
#[derive(Debug, Clone, PartialEq)]
pub struct EscapeEntry {
    pub eps: f64,
    /// Fraction of `(sample, l)` pairs with `λ1^E < ε`.
    pub fraction: f64,
}

/// Escape statistics of a sampled orbit ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct EscapeReport {
    pub entries: Vec<EscapeEntry>,
    /// Power-law fit of fraction against `ε` over the entries with
    /// positive fraction; `None` when fewer than 3 are positive.
    pub fit: Option<ExponentFit>,
    pub samples: usize,
    pub steps: usize,
}

/// Fraction of `(sample, l ∈ [0, k))` pairs outside the thick part
/// `{λ1^E ≥ ε}`, per `ε`, over `samples` orbits started at measure
/// samples. Samples run data-parallel on stream-separated generators
/// (stream = sample index), so results are independent of thread count.
///
/// # Errors
///
/// Propagates flow and enumeration failures from any orbit.
///
/// # Panics
///
/// Panics if the measure's dimension does not fill the flow's target
/// matrix, or the `ε` grid is empty.
pub fn escape_fraction(
    measure: &ProductMeasure,
    flow: &FlowElement,
    eps_grid: &[f64],
    k: usize,
    samples: usize,
    seed: u64,
) -> Result<EscapeReport> {
    check_measure_matches_flow(measure, flow);
    assert!(!eps_grid.is_empty(), "empty epsilon grid");
    assert!(k >= 1 && samples >= 1, "need k >= 1 and samples >= 1");
    let counts: Vec<Vec<u64>> = (0..samples)
        .into_par_iter()
        .map(|s| -> Result<Vec<u64>> {
            let mut rng = DetRng::new(seed, s as u64);
            let start = sample_start_basis(measure, flow, k, &mut rng);
            let mut c = vec![0u64; eps_grid.len()];
            run_orbit(start, flow, k, &mut |_, _, euc| {
                for (idx, &eps) in eps_grid.iter().enumerate() {
                    if euc < eps {
                        c[idx] += 1;
                    }
                }
            })?;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let total = (samples * k) as f64;
    let entries: Vec<EscapeEntry> = eps_grid
        .iter()
        .enumerate()
        .map(|(idx, &eps)| EscapeEntry {
            eps,
            fraction: counts.iter().map(|c| c[idx]).sum::<u64>() as f64 / total,
        })
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = entries
        .iter()
        .filter(|e| e.fraction > 0.0)
        .map(|e| (e.eps, e.fraction))
        .unzip();
    let fit = if xs.len() >= 3 { decay_exponent_fit(&xs, &ys).ok() } else { None };
    Ok(EscapeReport { entries, fit, samples, steps: k })
}

/// Running Cesàro averages of an observable over a sampled orbit
/// ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct CesaroTrace {
    /// `partial_averages[l] = (1/(samples·(l+1))) Σ_s Σ_{l'<=l} f`.
    pub partial_averages: Vec<f64>,
    pub samples: usize,
}

/// Cesàro averages `(1/k') Σ_{l<k'} f(orbit)` averaged over measure
/// samples, for every `k' ≤ k`. Deterministic under any thread count
/// (stream-per-sample generators, index-ordered merge).
///
/// # Errors
///
/// Propagates flow and enumeration failures.
///
/// # Panics
///
/// As [`escape_fraction`].
pub fn cesaro_statistic(
    measure: &ProductMeasure,
    flow: &FlowElement,
    f: &TestFunction,
    k: usize,
    samples: usize,
    seed: u64,
) -> Result<CesaroTrace> {
    check_measure_matches_flow(measure, flow);
    assert!(k >= 1 && samples >= 1, "need k >= 1 and samples >= 1");
    let per_sample: Vec<Vec<f64>> = (0..samples)
        .into_par_iter()
        .map(|s| -> Result<Vec<f64>> {
            let mut rng = DetRng::new(seed, s as u64);
            let start = sample_start_basis(measure, flow, k, &mut rng);
            let mut values = Vec::with_capacity(k);
            run_orbit(start, flow, k, &mut |_, sup, euc| {
                values.push(f.evaluate(sup, euc));
            })?;
            Ok(values)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut level_sums = vec![0.0f64; k];
    for values in &per_sample {
        for (l, v) in values.iter().enumerate() {
            level_sums[l] += v;
        }
    }
    let mut partial_averages = Vec::with_capacity(k);
    let mut acc = 0.0;
    for (l, s) in level_sums.iter().enumerate() {
        acc += s;
        partial_averages.push(acc / (samples as f64 * (l + 1) as f64));
    }
    Ok(CesaroTrace { partial_averages, samples })
}

/// All values of an observable over a sampled orbit ensemble, flattened
/// sample-major: index `s·k + l` holds step `l` of sample `s`.
///
/// # Errors
///
/// Propagates flow and enumeration failures.
///
/// # Panics
///
/// As [`escape_fraction`].
pub fn pooled_orbit_values(
    measure: &ProductMeasure,
    flow: &FlowElement,
    f: &TestFunction,
    k: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_measure_matches_flow(measure, flow);
    assert!(k >= 1 && samples >= 1, "need k >= 1 and samples >= 1");
    let per_sample: Vec<Vec<f64>> = (0..samples)
        .into_par_iter()
        .map(|s| -> Result<Vec<f64>> {
            let mut rng = DetRng::new(seed, s as u64);
            let start = sample_start_basis(measure, flow, k, &mut rng);
            let mut values = Vec::with_capacity(k);
            run_orbit(start, flow, k, &mut |_, sup, euc| {
                values.push(f.evaluate(sup, euc));
            })?;
            Ok(values)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_sample.into_iter().flatten().collect())
}

/// `(x, y)` with `|x| ≤ 1/2`, `x² + y² ≥ 1`, `y ≤ HAAR_Y_MAX`, distributed
/// with density proportional to `y^{-2}` (inverse-CDF in `y`, rejection on
/// the circle; the truncation removes mass `< 1e-4`).
pub(crate) fn haar_sample_xy(rng: &mut DetRng) -> (f64, f64) {
    let y0 = 3f64.sqrt() / 2.0;
    loop {
        let x = rng.next_f64() - 0.5;
        let u = rng.next_f64();
        let y = 1.0 / (1.0 / y0 - u * (1.0 / y0 - 1.0 / HAAR_Y_MAX));
        if x * x + y * y >= 1.0 {
            return (x, y);
        }
    }
}

/// Draws a unimodular 2-D lattice from the invariant (Haar) law of the
/// space of unimodular lattices.
///
/// The fundamental-domain coordinates `(x, y)` fix the lattice only up to
/// rotation, and rotation-sensitive statistics (anything built on the sup
/// norm) see the rotation; a uniform rotation angle completes the
/// coordinates. Basis rows are
/// `y^{-1/2}·(cos θ, sin θ)` and `y^{-1/2}·(x cos θ − y sin θ, x sin θ + y cos θ)`,
/// with determinant 1 within `1e-12`.
pub fn haar_sample_sl2(rng: &mut DetRng) -> LatticeBasis {
    let (x, y) = haar_sample_xy(rng);
    let theta = rng.next_f64() * std::f64::consts::TAU;
    let (sn, cs) = theta.sin_cos();
    let s = 1.0 / y.sqrt();
    let rows = [
        s * cs,
        s * sn,
        s * (x * cs - y * sn),
        s * (x * sn + y * cs),
    ];
    LatticeBasis::from_f64_rows(&rows, 2)
}

/// Pooled `λ1` values of `count` independent Haar lattices (streams
/// `0..count` of `seed`), in the requested norm.
pub fn haar_lambda1_sample(count: usize, seed: u64, norm: NormKind) -> Vec<f64> {
    (0..count)
        .into_par_iter()
        .map(|s| {
            let mut rng = DetRng::new(seed, s as u64);
            let basis = haar_sample_sl2(&mut rng);
            let (sup, euc) = lambda1_pair_reduced_2d(&{
                let mut b = basis;
                b.reduce();
                b
            }.rows);
            match norm {
                NormKind::Sup => sup,
                NormKind::Euclidean => euc,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fractal::FractalMeasure;
    use num_rational::BigRational;

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    fn rational_target_1x1(y: BigRational) -> TargetMatrix {
        TargetMatrix::Rational { m: 1, n: 1, entries: vec![y] }
    }

    /// Hermite normal form (row-style, upper triangular, positive pivots,
    /// entries above a pivot reduced) of an integer matrix — canonical
    /// representative of the row span.
    fn integer_row_hnf(mat: &[BigInt], d: usize) -> Vec<BigInt> {
        let mut a = mat.to_vec();
        let mut rank = 0usize;
        for col in 0..d {
            // clear the column below `rank` by gcd steps
            loop {
                let mut nonzero: Vec<usize> =
                    (rank..d).filter(|&r| !a[r * d + col].is_zero()).collect();
                if nonzero.is_empty() {
                    break;
                }
                if nonzero.len() == 1 {
                    let r = nonzero[0];
                    for j in 0..d {
                        a.swap(rank * d + j, r * d + j);
                    }
                    break;
                }
                nonzero.sort_by(|&x, &y| a[x * d + col].abs().cmp(&a[y * d + col].abs()));
                let (small, big) = (nonzero[0], nonzero[1]);
                let q = &a[big * d + col] / &a[small * d + col];
                for j in 0..d {
                    let delta = &q * &a[small * d + j];
                    a[big * d + j] -= delta;
                }
            }
            if a[rank * d + col].is_zero() {
                continue;
            }
            if a[rank * d + col].is_negative() {
                for j in 0..d {
                    a[rank * d + j] = -a[rank * d + j].clone();
                }
            }
            // reduce the entries above the pivot
            let pivot = a[rank * d + col].clone();
            for r in 0..rank {
                let q = a[r * d + col].div_floor(&pivot);
                if !q.is_zero() {
                    for j in 0..d {
                        let delta = &q * &a[rank * d + j];
                        a[r * d + j] -= delta;
                    }
                }
            }
            rank += 1;
            if rank == d {
                break;
            }
        }
        a
    }

    #[test]
    fn embedding_zero_target_gives_identity_rows() {
        let b = phi_embed(&rational_target_1x1(rat(0, 1)));
        assert_eq!(b.rows_f64(), &[1.0, 0.0, 0.0, 1.0]);
        assert!((b.det_abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn embedding_half_places_target_in_lower_block() {
        let b = phi_embed(&rational_target_1x1(rat(1, 2)));
        assert_eq!(b.rows_f64(), &[1.0, 0.0, 0.5, 1.0]);
        let b = phi_embed(&TargetMatrix::F64 { m: 1, n: 1, entries: vec![0.5] });
        assert_eq!(b.rows_f64(), &[1.0, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn embedding_is_exactly_unimodular_on_random_rationals() {
        let mut rng = DetRng::new(10, 0);
        for _ in 0..100 {
            let y = rat(rng.next_below(2001) as i64 - 1000, 1 + rng.next_below(999) as i64);
            let b = phi_embed(&rational_target_1x1(y));
            assert_eq!(b.det_coeffs_abs, b.col_den.iter().product::<BigInt>());
        }
    }

    #[test]
    fn embedding_general_shape_keeps_unit_determinant() {
        let entries = vec![rat(1, 3), rat(-2, 7), rat(5, 3), rat(1, 21), rat(0, 1), rat(3, 14)];
        let b = phi_embed(&TargetMatrix::Rational { m: 2, n: 3, entries });
        assert!((b.det_abs() - 1.0).abs() < 1e-12);
        let b = phi_embed(&TargetMatrix::F64 {
            m: 2,
            n: 2,
            entries: vec![0.371, -0.82, 0.0033, 0.9],
        });
        assert!((b.det_abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_flow_step_on_identity_scales_the_axes() {
        let b = phi_embed(&rational_target_1x1(rat(0, 1)));
        let flow = FlowElement::new_split(1, 1, 2);
        let stepped = flow_step(&b, &flow, 1).unwrap();
        let mut entries: Vec<f64> = stepped.rows_f64().iter().map(|v| v.abs()).collect();
        entries.sort_by(f64::total_cmp);
        assert_eq!(entries, vec![0.0, 0.0, 0.5, 2.0]);
        assert!((stepped.det_abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_steps_leave_the_lattice_unchanged() {
        let b = phi_embed(&rational_target_1x1(rat(1, 3)));
        let flow = FlowElement::new_split(1, 1, 5);
        let same = flow_step(&b, &flow, 0).unwrap();
        let (s1, e1) = b.lambda1_pair().unwrap();
        let (s2, e2) = same.lambda1_pair().unwrap();
        assert_eq!((s1, e1), (s2, e2));
    }

    #[test]
    fn flowed_half_target_reaches_sup_norm_one() {
        let b = phi_embed(&rational_target_1x1(rat(1, 2)));
        let flow = FlowElement::new_split(1, 1, 2);
        let stepped = flow_step(&b, &flow, 1).unwrap();
        let (sup, _) = stepped.lambda1_pair().unwrap();
        assert!((sup - 1.0).abs() < 1e-12, "sup {sup}");
        let sv = shortest_vector(&stepped, NormKind::Sup).unwrap();
        assert!((sv.length - 1.0).abs() < 1e-12);
    }

    #[test]
    fn repeated_single_steps_compose_exactly() {
        // Power-of-two flow keeps column scales bit-identical, so the two
        // routes must give the same integer row span.
        let y = rat(7, 16);
        let flow = FlowElement::new_split(1, 1, 2);
        let mut once = phi_embed(&rational_target_1x1(y.clone()));
        once.flow_step_in_place(&flow, 7).unwrap();
        let mut twice = phi_embed(&rational_target_1x1(y));
        twice.flow_step_in_place(&flow, 3).unwrap();
        twice.flow_step_in_place(&flow, 4).unwrap();
        assert_eq!(once.col_log2, twice.col_log2);
        assert_eq!(
            integer_row_hnf(&once.coeffs, 2),
            integer_row_hnf(&twice.coeffs, 2)
        );
    }

    #[test]
    fn composition_agrees_for_non_dyadic_scales() {
        let y = TargetMatrix::F64 { m: 1, n: 2, entries: vec![0.3217, 0.777] };
        let flow = FlowElement::new_split(1, 2, 3);
        let a = flow_step(&phi_embed(&y), &flow, 5).unwrap();
        let mut b = phi_embed(&y);
        b.flow_step_in_place(&flow, 2).unwrap();
        b.flow_step_in_place(&flow, 3).unwrap();
        let (s1, e1) = a.lambda1_pair().unwrap();
        let (s2, e2) = b.lambda1_pair().unwrap();
        assert!((s1 - s2).abs() < 1e-9 && (e1 - e2).abs() < 1e-9);
    }

    #[test]
    fn inverse_steps_return_to_the_start() {
        let y = rational_target_1x1(rat(5, 8));
        let flow = FlowElement::new_split(1, 1, 2);
        let mut b = phi_embed(&y);
        b.flow_step_in_place(&flow, 6).unwrap();
        b.flow_step_in_place(&flow, -6).unwrap();
        let reference = phi_embed(&y);
        assert_eq!(b.col_log2, reference.col_log2);
        assert_eq!(
            integer_row_hnf(&b.coeffs, 2),
            integer_row_hnf(&reference.coeffs, 2)
        );
    }

    #[test]
    fn standard_lattice_shortest_vector_is_first_axis() {
        let b = LatticeBasis::from_f64_rows(&[1.0, 0.0, 0.0, 1.0], 2);
        for norm in [NormKind::Euclidean, NormKind::Sup] {
            let sv = shortest_vector(&b, norm).unwrap();
            assert_eq!(sv.coefficients, vec![1, 0], "{norm:?}");
            assert_eq!(sv.vector, vec![1.0, 0.0]);
            assert_eq!(sv.length, 1.0);
        }
        let b3 = LatticeBasis::from_f64_rows(
            &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            3,
        );
        let sv = shortest_vector(&b3, NormKind::Euclidean).unwrap();
        assert_eq!(sv.coefficients, vec![1, 0, 0]);
    }

    #[test]
    fn skewed_diagonal_lattice_has_short_first_axis() {
        let b = LatticeBasis::from_f64_rows(&[0.5, 0.0, 0.0, 2.0], 2);
        let sv = shortest_vector(&b, NormKind::Sup).unwrap();
        assert_eq!(sv.length, 0.5);
        assert_eq!(sv.vector, vec![0.5, 0.0]);
        assert_eq!(sv.coefficients, vec![1, 0]);
    }

    #[test]
    fn enumeration_matches_brute_force_on_random_bases() {
        let mut rng = DetRng::new(77, 3);
        for trial in 0..100 {
            // random unimodular lattice: embedded random target, flowed a bit
            let y = rat(rng.next_below(4001) as i64 - 2000, 2048);
            let flow = FlowElement::new_split(1, 1, 2);
            let l = rng.next_below(7) as i64;
            let b = flow_step(&phi_embed(&rational_target_1x1(y)), &flow, l).unwrap();
            let sv_e = shortest_vector(&b, NormKind::Euclidean).unwrap();
            let sv_s = shortest_vector(&b, NormKind::Sup).unwrap();
            // brute force over |c| <= 50 on the original rows
            let rows = b.rows_f64();
            let mut best_e = f64::INFINITY;
            let mut best_s = f64::INFINITY;
            for c0 in -50i64..=50 {
                for c1 in -50i64..=50 {
                    if c0 == 0 && c1 == 0 {
                        continue;
                    }
                    let x = c0 as f64 * rows[0] + c1 as f64 * rows[2];
                    let yv = c0 as f64 * rows[1] + c1 as f64 * rows[3];
                    best_e = best_e.min((x * x + yv * yv).sqrt());
                    best_s = best_s.min(x.abs().max(yv.abs()));
                }
            }
            assert!(
                (sv_e.length - best_e).abs() <= 1e-12 * best_e.max(1.0),
                "trial {trial}: euclidean {} vs {best_e}",
                sv_e.length
            );
            assert!(
                (sv_s.length - best_s).abs() <= 1e-12 * best_s.max(1.0),
                "trial {trial}: sup {} vs {best_s}",
                sv_s.length
            );
        }
    }

    #[test]
    fn lambda1_is_invariant_under_basis_change() {
        let mut rng = DetRng::new(5, 1);
        let transforms: [[i64; 4]; 4] =
            [[1, 0, 3, 1], [1, -2, 0, 1], [2, 1, 1, 1], [0, 1, -1, 0]];
        for trial in 0..20 {
            let y = rat(rng.next_below(1000) as i64, 1024);
            let b = flow_step(
                &phi_embed(&rational_target_1x1(y)),
                &FlowElement::new_split(1, 1, 2),
                3,
            )
            .unwrap();
            let (sup, euc) = b.lambda1_pair().unwrap();
            for u in &transforms {
                let t = b.transformed_by(u);
                let (sup2, euc2) = t.lambda1_pair().unwrap();
                assert!((sup - sup2).abs() < 1e-12, "trial {trial}");
                assert!((euc - euc2).abs() < 1e-12, "trial {trial}");
            }
        }
    }

    #[test]
    fn norm_comparison_and_unimodular_bound_hold() {
        let mut rng = DetRng::new(6, 0);
        for _ in 0..100 {
            let basis = haar_sample_sl2(&mut rng);
            let (sup, euc) = basis.lambda1_pair().unwrap();
            let d = basis.dimension() as f64;
            assert!(sup <= euc + 1e-12);
            assert!(euc <= d.sqrt() * sup * (1.0 + 1e-12));
            assert!(sup <= 1.0 + 1e-9, "sup-norm minimum above 1: {sup}");
        }
    }

    #[test]
    fn sup_norm_bound_holds_in_higher_dimensions() {
        let mut rng = DetRng::new(61, 0);
        for (m, n) in [(1usize, 2usize), (2, 1), (2, 2), (1, 3)] {
            for _ in 0..10 {
                let entries: Vec<f64> = (0..m * n).map(|_| rng.next_f64()).collect();
                let flow = FlowElement::new_split(m, n, 2);
                let b =
                    flow_step(&phi_embed(&TargetMatrix::F64 { m, n, entries }), &flow, 2)
                        .unwrap();
                let (sup, euc) = b.lambda1_pair().unwrap();
                assert!(sup <= 1.0 + 1e-9, "(m,n)=({m},{n}): sup {sup}");
                assert!(sup <= euc + 1e-12);
                assert!(euc <= ((m + n) as f64).sqrt() * sup * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn fast_lambda1_agrees_with_enumeration() {
        let mut rng = DetRng::new(8, 0);
        for _ in 0..300 {
            let basis = haar_sample_sl2(&mut rng);
            let (sup, euc) = basis.lambda1_pair().unwrap();
            let sv_s = shortest_vector(&basis, NormKind::Sup).unwrap();
            let sv_e = shortest_vector(&basis, NormKind::Euclidean).unwrap();
            assert!((sup - sv_s.length).abs() < 1e-12 * sup.max(1.0));
            assert!((euc - sv_e.length).abs() < 1e-12 * euc.max(1.0));
        }
    }

    #[test]
    fn reduced_basis_stays_near_minimum_scale() {
        // covolume 1 in d=2 forces |b1| <= sqrt(1/λ1² + λ1²/4) when reduced
        let mut rng = DetRng::new(9, 0);
        for _ in 0..50 {
            let mut basis = haar_sample_sl2(&mut rng);
            basis.reduce();
            let (_, euc) = basis.lambda1_pair().unwrap();
            let b1: f64 = basis.rows_f64()[2..4].iter().map(|v| v * v).sum::<f64>().sqrt();
            let bound = (1.0 / (euc * euc) + euc * euc / 4.0).sqrt();
            assert!(b1 <= bound * (1.0 + 1e-9), "b1 {b1} bound {bound}");
        }
    }

    #[test]
    fn membership_predicates_use_the_right_norms_and_strictness() {
        let z2 = LatticeBasis::from_f64_rows(&[1.0, 0.0, 0.0, 1.0], 2);
        assert!(in_f_epsilon(&z2, 0.5).unwrap());
        assert!(in_f_epsilon(&z2, 1.0).unwrap()); // >= is inclusive
        assert!(!k_sigma_member(&z2, 1.0).unwrap()); // > is strict
        assert!(k_sigma_member(&z2, 0.99).unwrap());
        let flowed = flow_step(
            &phi_embed(&rational_target_1x1(rat(1, 2))),
            &FlowElement::new_split(1, 1, 2),
            1,
        )
        .unwrap();
        assert!(k_sigma_member(&flowed, 0.9).unwrap());
    }

    #[test]
    fn determinant_stays_unit_along_long_orbits() {
        let measure = ProductMeasure::Fractal(FractalMeasure::new(1, 64));
        let flow = FlowElement::new_klw(1, std::f64::consts::LN_2);
        let mut rng = DetRng::new(12, 0);
        let mut basis = sample_start_basis(&measure, &flow, 10_000, &mut rng);
        let mut min_sup: f64 = f64::INFINITY;
        for _ in 0..10_000 {
            basis.flow_step_in_place(&flow, 1).unwrap();
            min_sup = min_sup.min(lambda1_pair_reduced_2d(basis.rows_f64()).0);
        }
        assert!((basis.det_abs() - 1.0).abs() <= 1e-6, "det {}", basis.det_abs());
        assert!(basis.log_det_drift() <= 1e-6);
        assert!(min_sup > 0.0, "orbit collapsed to zero");
    }

    #[test]
    fn drift_guard_raises_numerical_blowup() {
        let mut b = phi_embed(&rational_target_1x1(rat(1, 3)));
        b.inject_scale_drift(0.001);
        let err = b.flow_step_in_place(&FlowElement::new_split(1, 1, 2), 1).unwrap_err();
        assert!(matches!(err, Error::NumericalBlowup { .. }));
    }

    #[test]
    fn orbit_statistics_flags_match_stored_lambda1() {
        let measure = ProductMeasure::Lebesgue { dimension_count: 1 };
        let flow = FlowElement::new_split(1, 1, 2);
        let mut rng = DetRng::new(13, 0);
        let start = sample_start_basis(&measure, &flow, 50, &mut rng);
        let stats =
            single_orbit_statistics(&start, &flow, 50, &[0.1, 0.5], &[0.5]).unwrap();
        assert_eq!(stats.lambda1_sup.len(), 50);
        for (l, flag) in stats.f_eps_flags(0.5).iter().enumerate() {
            assert_eq!(*flag, stats.lambda1_euc[l] >= 0.5);
        }
        for (l, flag) in stats.k_sigma_flags(0.5).iter().enumerate() {
            assert_eq!(*flag, stats.lambda1_sup[l] > 0.5);
        }
    }

    #[test]
    fn cesaro_average_of_constant_function_is_one() {
        let measure = ProductMeasure::Lebesgue { dimension_count: 1 };
        let flow = FlowElement::new_split(1, 1, 2);
        // λ1^E ≥ 0 always, so this indicator is constantly 1
        let trace = cesaro_statistic(
            &measure,
            &flow,
            &TestFunction::FEpsIndicator { eps: 0.0 },
            20,
            5,
            7,
        )
        .unwrap();
        for v in trace.partial_averages {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn cesaro_partial_sums_grow_for_nonnegative_observables() {
        let measure = ProductMeasure::Lebesgue { dimension_count: 1 };
        let flow = FlowElement::new_split(1, 1, 2);
        let mut rng = DetRng::new(14, 0);
        let start = sample_start_basis(&measure, &flow, 100, &mut rng);
        let stats = single_orbit_statistics(&start, &flow, 100, &[], &[]).unwrap();
        let averages = stats.cesaro_partial_averages(&TestFunction::Lambda1Sup);
        let mut prev_sum = 0.0;
        for (l, avg) in averages.iter().enumerate() {
            let sum = avg * (l + 1) as f64;
            assert!(sum >= prev_sum - 1e-12);
            prev_sum = sum;
        }
    }

    #[test]
    fn escape_fractions_are_monotone_and_saturate() {
        let measure = ProductMeasure::Lebesgue { dimension_count: 1 };
        let flow = FlowElement::new_klw(1, std::f64::consts::LN_2);
        let report =
            escape_fraction(&measure, &flow, &[0.05, 0.1, 0.2, 10.0], 60, 40, 99).unwrap();
        for pair in report.entries.windows(2) {
            assert!(pair[0].fraction <= pair[1].fraction + 1e-15);
        }
        // every λ1^E is below 10 (sup bound 1 and norm comparison)
        assert_eq!(report.entries[3].fraction, 1.0);
    }

    #[test]
    fn escape_report_is_reproducible() {
        let measure = ProductMeasure::Fractal(FractalMeasure::new(1, 64));
        let flow = FlowElement::new_klw(1, std::f64::consts::LN_2);
        let a = escape_fraction(&measure, &flow, &[0.1, 0.2], 30, 20, 5).unwrap();
        let b = escape_fraction(&measure, &flow, &[0.1, 0.2], 30, 20, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn haar_samples_are_unimodular_with_positive_minimum() {
        let mut rng = DetRng::new(15, 0);
        for _ in 0..1000 {
            let b = haar_sample_sl2(&mut rng);
            assert!((b.det_abs() - 1.0).abs() <= 1e-12);
            let (_, euc) = b.lambda1_pair().unwrap();
            assert!(euc > 0.0);
        }
    }

    #[test]
    fn haar_fundamental_domain_mean_height_matches_quadrature() {
        // E[y] over {|x| <= 1/2, x²+y² >= 1, y <= Y} with density ∝ y^{-2}:
        // numerator ∫ ln(Y/y_low(x)) dx, denominator ∫ (1/y_low(x) - 1/Y) dx,
        // y_low(x) = sqrt(1 - x²); both integrals by Simpson.
        let steps = 20_000usize;
        let h = 1.0 / steps as f64;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..=steps {
            let x = -0.5 + i as f64 * h;
            let w = if i == 0 || i == steps {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let ylow = (1.0 - x * x).sqrt();
            num += w * (HAAR_Y_MAX / ylow).ln();
            den += w * (1.0 / ylow - 1.0 / HAAR_Y_MAX);
        }
        let expected = num / den;

        let n = 100_000usize;
        let mut rng = DetRng::new(424_242, 0);
        let ys: Vec<f64> = (0..n).map(|_| haar_sample_xy(&mut rng).1).collect();
        let mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - expected).abs() <= 3.0 * se,
            "mean {mean}, expected {expected}, se {se}"
        );
    }

    #[test]
    fn start_bit_recommendation_scales_with_steps_and_rate() {
        let f = FlowElement::new_split(1, 1, 2);
        assert_eq!(f.recommended_start_bits(2000), 2128);
        let f = FlowElement::new_klw(1, std::f64::consts::LN_2);
        assert_eq!(f.recommended_start_bits(500), 628);
        let f = FlowElement::new_split(2, 1, 3);
        assert!(f.recommended_start_bits(100) > 100);
    }

    #[test]
    fn pooled_values_flatten_sample_major() {
        let measure = ProductMeasure::Lebesgue { dimension_count: 1 };
        let flow = FlowElement::new_split(1, 1, 2);
        let pooled =
            pooled_orbit_values(&measure, &flow, &TestFunction::Lambda1Sup, 10, 3, 21)
                .unwrap();
        assert_eq!(pooled.len(), 30);
        let mut rng = DetRng::new(21, 1);
        let start = sample_start_basis(&measure, &flow, 10, &mut rng);
        let stats = single_orbit_statistics(&start, &flow, 10, &[], &[]).unwrap();
        assert_eq!(&pooled[10..20], stats.lambda1_sup.as_slice());
    }
}
