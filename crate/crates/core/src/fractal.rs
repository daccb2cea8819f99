//! Exact Cantor-type measure on `[0,1]`, its k-fold products, and the
//! measure-class scans (local dimension, doubling ratio, hyperplane-slab
//! decay) used to certify its geometry.
//!
//! # Construction
//!
//! Stage `i` subdivides every interval retained at stage `i-1` into `2i+1`
//! equal closed subintervals and discards the open middle one, keeping the
//! `2i` others in left-to-right order; the digit `y_i ∈ {1,…,2i}` selects a
//! retained child. Consequently a stage-`n` cylinder
//!
//! * has length `∏_{i=1}^n 1/(2i+1)` exactly,
//! * carries mass `∏_{i=1}^n 1/(2i)` under the measure that splits mass
//!   equally among children (independent of the digits),
//! * and the union of stage-`n` cylinders has total length
//!   `∏_{i=1}^n 2i/(2i+1)`, which tends to zero — the limit set is
//!   Lebesgue-null while carrying a fully supported atomless probability
//!   measure.
//!
//! All cylinder arithmetic is exact (`BigRational`); statistical scans
//! convert to `f64` only at the fitting step.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::analysis::{decay_exponent_fit, ExponentFit};
use crate::error::{Error, Result};
use crate::rng::DetRng;
use crate::util::ratio_to_f64;

/// Digit word addressing a stage-`n` cylinder; digit `y_i` obeys
/// `1 <= y_i <= 2i` and the empty word addresses `[0,1]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IntervalCode {
    digits: Vec<u32>,
}

impl IntervalCode {
    /// Validates `1 <= y_i <= 2i` for every digit.
    ///
    /// # Errors
    ///
    /// [`Error::InvalidCode`] on the first out-of-range digit.
    pub fn new(digits: Vec<u32>) -> Result<Self> {
        for (idx, &d) in digits.iter().enumerate() {
            let stage = idx + 1;
            let max = 2 * stage as u32;
            if d < 1 || d > max {
                return Err(Error::InvalidCode { digit: d, stage, max });
            }
        }
        Ok(IntervalCode { digits })
    }

    /// The empty code addressing `[0,1]`.
    pub fn root() -> Self {
        IntervalCode { digits: Vec::new() }
    }

    /// Number of digits.
    pub fn stage(&self) -> usize {
        self.digits.len()
    }

    /// The digit word.
    pub fn digits(&self) -> &[u32] {
        &self.digits
    }

    /// Extends the code by one digit.
    ///
    /// # Errors
    ///
    /// [`Error::InvalidCode`] if the digit is out of range for the child
    /// stage.
    pub fn child(&self, digit: u32) -> Result<Self> {
        let stage = self.stage() + 1;
        let max = 2 * stage as u32;
        if digit < 1 || digit > max {
            return Err(Error::InvalidCode { digit, stage, max });
        }
        let mut digits = self.digits.clone();
        digits.push(digit);
        Ok(IntervalCode { digits })
    }

    /// Parses a comma-separated digit list; the empty string is the root.
    ///
    /// # Errors
    ///
    /// [`Error::InvalidCode`] on malformed digits or range violations.
    pub fn parse(text: &str) -> Result<Self> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Ok(Self::root());
        }
        let mut digits = Vec::new();
        for (idx, part) in trimmed.split(',').enumerate() {
            let digit: u32 = part.trim().parse().map_err(|_| Error::InvalidCode {
                digit: u32::MAX,
                stage: idx + 1,
                max: 2 * (idx + 1) as u32,
            })?;
            digits.push(digit);
        }
        Self::new(digits)
    }
}

impl std::fmt::Display for IntervalCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.digits.iter().map(|d| d.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// Closed subinterval of `[0,1]` with exact rational endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalInterval {
    pub left: BigRational,
    pub right: BigRational,
}

impl RationalInterval {
    /// The unit interval `[0,1]`.
    pub fn unit() -> Self {
        RationalInterval { left: BigRational::zero(), right: BigRational::one() }
    }

    /// Exact length `right - left`.
    pub fn length(&self) -> BigRational {
        &self.right - &self.left
    }

    /// Exact midpoint.
    pub fn midpoint(&self) -> BigRational {
        (&self.left + &self.right) / BigRational::from_integer(BigInt::from(2))
    }

    /// Whether `x` lies in the closed interval.
    pub fn contains(&self, x: &BigRational) -> bool {
        self.left <= *x && *x <= self.right
    }
}

/// The retained child of `parent` selected by `digit` at stage `stage`
/// (`parent` is a stage-`stage - 1` cylinder): the parent splits into
/// `2·stage + 1` equal slots, the middle slot `stage + 1` is removed, and
/// digit `y` occupies slot `y` if `y <= stage`, else slot `y + 1`.
fn child_interval(parent: &RationalInterval, stage: usize, digit: u32) -> RationalInterval {
    let slots = 2 * stage as u32 + 1;
    let slot = if digit <= stage as u32 { digit } else { digit + 1 };
    let width = parent.length() / BigRational::from_integer(BigInt::from(slots));
    let left = &parent.left + &width * BigRational::from_integer(BigInt::from(slot - 1));
    let right = &left + &width;
    RationalInterval { left, right }
}

/// Exact endpoints of the cylinder addressed by `code`; a stage-`n`
/// cylinder has length `∏_{i=1}^n 1/(2i+1)`.
pub fn interval_of_code(code: &IntervalCode) -> RationalInterval {
    let mut iv = RationalInterval::unit();
    for (idx, &digit) in code.digits().iter().enumerate() {
        iv = child_interval(&iv, idx + 1, digit);
    }
    iv
}

/// Exact cylinder mass `∏_{i=1}^n 1/(2i)` — independent of digit values.
pub fn mass_of_code(code: &IntervalCode) -> BigRational {
    let mut mass = BigRational::one();
    for i in 1..=code.stage() {
        mass /= BigRational::from_integer(BigInt::from(2 * i as u64));
    }
    mass
}

/// Exact Lebesgue measure `∏_{i=1}^n 2i/(2i+1)` of the stage-`n` retained
/// set; its square is at most `2/(2n+2)` for `n >= 1`, which drives the
/// measure-zero limit.
pub fn remaining_set_measure(n: usize) -> BigRational {
    let mut prod = BigRational::one();
    for i in 1..=n {
        prod *= BigRational::new(BigInt::from(2 * i as u64), BigInt::from(2 * i as u64 + 1));
    }
    prod
}

/// The depth-`n` cylinder containing `x`, scanning children left to right
/// so shared endpoints resolve to the left cylinder.
///
/// # Errors
///
/// [`Error::NotInRemainingSet`] if `x` falls outside `[0,1]` or into a
/// removed gap at some stage `<= depth`.
pub fn code_of_point(x: &BigRational, depth: usize) -> Result<IntervalCode> {
    let mut iv = RationalInterval::unit();
    if !iv.contains(x) {
        return Err(Error::NotInRemainingSet { stage: 0 });
    }
    let mut code = IntervalCode::root();
    for stage in 1..=depth {
        let mut found = None;
        for digit in 1..=2 * stage as u32 {
            let child = child_interval(&iv, stage, digit);
            if child.contains(x) {
                found = Some((digit, child));
                break;
            }
        }
        match found {
            Some((digit, child)) => {
                code = code.child(digit).expect("digit in range by construction");
                iv = child;
            }
            None => return Err(Error::NotInRemainingSet { stage }),
        }
    }
    Ok(code)
}

/// All stage-`n` codes in lexicographic order (`∏ 2i` of them — intended
/// for small `n` in audits and tests).
pub fn codes_at_stage(n: usize) -> Vec<IntervalCode> {
    let mut out = vec![IntervalCode::root()];
    for stage in 1..=n {
        let mut next = Vec::with_capacity(out.len() * 2 * stage);
        for code in &out {
            for digit in 1..=2 * stage as u32 {
                next.push(code.child(digit).expect("digit in range"));
            }
        }
        out = next;
    }
    out
}

/// Exact-rational query engine for the k-fold product of the Cantor-type
/// measure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FractalMeasure {
    /// Number of independent coordinates (`k >= 1`).
    pub dimension_count: usize,
    /// Truncation stage available to [`FractalMeasure::sample`].
    pub max_depth: usize,
}

impl FractalMeasure {
    /// A `k`-fold product measure truncated at `max_depth`.
    ///
    /// # Panics
    ///
    /// Panics if `dimension_count == 0` or `max_depth == 0`.
    pub fn new(dimension_count: usize, max_depth: usize) -> Self {
        assert!(dimension_count >= 1, "dimension_count must be >= 1");
        assert!(max_depth >= 1, "max_depth must be >= 1");
        FractalMeasure { dimension_count, max_depth }
    }

    /// Draws one point of `[0,1]^k`: per coordinate, digits `y_i` uniform
    /// on `{1,…,2i}` independently down to `depth`, returning the exact
    /// midpoint of the resulting cylinder. The induced law is the measure
    /// coarsened to depth-`depth` cylinders.
    ///
    /// # Panics
    ///
    /// Panics if `depth > max_depth`.
    pub fn sample(&self, rng: &mut DetRng, depth: usize) -> Vec<BigRational> {
        assert!(depth <= self.max_depth, "depth {depth} exceeds max_depth {}", self.max_depth);
        (0..self.dimension_count).map(|_| midpoint_walk(rng, depth)).collect()
    }
}

fn midpoint_walk(rng: &mut DetRng, depth: usize) -> BigRational {
    let mut iv = RationalInterval::unit();
    for stage in 1..=depth {
        let digit = 1 + rng.next_below(2 * stage as u64) as u32;
        iv = child_interval(&iv, stage, digit);
    }
    iv.midpoint()
}

/// A point of `[0,1)^k` given by dyadic numerators: coordinate `j` equals
/// `numerators[j] / 2^bits`. High-`bits` points feed long flow orbits,
/// where 53-bit coordinates would be rational enough to distort the
/// dynamics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DyadicPoint {
    pub numerators: Vec<BigUint>,
    pub bits: u32,
}

impl DyadicPoint {
    /// Coordinates rounded to `f64` (for reporting only).
    pub fn to_f64_coords(&self) -> Vec<f64> {
        self.numerators
            .iter()
            .map(|n| {
                crate::util::scaled_int_to_f64(&BigInt::from(n.clone()), -(self.bits as f64))
            })
            .collect()
    }
}

/// Product probability measure on `[0,1]^k`: either the Cantor-type
/// measure above or the uniform (Lebesgue) comparison measure. All ball
/// queries use sup-norm balls, which factor into per-coordinate intervals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProductMeasure {
    Fractal(FractalMeasure),
    Lebesgue { dimension_count: usize },
}

/// Exact bracket `[lower, upper]` on the mass of a sup-norm ball obtained
/// from depth-`depth` cylinders: `lower` sums cylinders wholly inside the
/// ball, `upper` adds the boundary cylinders.
#[derive(Debug, Clone, PartialEq)]
pub struct BallMassBounds {
    pub lower: BigRational,
    pub upper: BigRational,
    pub depth: usize,
}

impl BallMassBounds {
    /// Midpoint `(lower + upper) / 2` as `f64`.
    pub fn midpoint_f64(&self) -> f64 {
        ratio_to_f64(&((&self.lower + &self.upper) / BigRational::from_integer(BigInt::from(2))))
    }
}

impl ProductMeasure {
    /// Number of coordinates.
    pub fn dimension_count(&self) -> usize {
        match self {
            ProductMeasure::Fractal(m) => m.dimension_count,
            ProductMeasure::Lebesgue { dimension_count } => *dimension_count,
        }
    }

    /// Exact mass bracket of the 1-D set `[lo, hi] ∩ [0,1]` under one
    /// coordinate factor, refining to stage `depth`. For the uniform
    /// factor the bracket is a single exact value.
    pub fn interval_mass_bounds(
        &self,
        lo: &BigRational,
        hi: &BigRational,
        depth: usize,
    ) -> (BigRational, BigRational) {
        match self {
            ProductMeasure::Lebesgue { .. } => {
                let zero = BigRational::zero();
                let one = BigRational::one();
                let a = if *lo < zero { zero.clone() } else { lo.clone() };
                let b = if *hi > one { one } else { hi.clone() };
                let len = if b > a { b - a } else { zero };
                (len.clone(), len)
            }
            ProductMeasure::Fractal(_) => {
                let mut acc = (BigRational::zero(), BigRational::zero());
                descend_mass(
                    &RationalInterval::unit(),
                    0,
                    &BigRational::one(),
                    lo,
                    hi,
                    depth,
                    &mut acc,
                );
                acc
            }
        }
    }

    /// Exact mass bracket of the sup-norm ball `B(center, radius)`; the
    /// ball factors into per-coordinate intervals whose brackets multiply.
    ///
    /// # Panics
    ///
    /// Panics if `center.len()` differs from the dimension count or
    /// `radius <= 0`.
    pub fn ball_mass_bounds(
        &self,
        center: &[BigRational],
        radius: &BigRational,
        depth: usize,
    ) -> BallMassBounds {
        assert_eq!(center.len(), self.dimension_count(), "center dimension mismatch");
        assert!(radius.is_positive(), "radius must be positive");
        let mut lower = BigRational::one();
        let mut upper = BigRational::one();
        for c in center {
            let (lo_m, hi_m) = self.interval_mass_bounds(&(c - radius), &(c + radius), depth);
            lower *= lo_m;
            upper *= hi_m;
        }
        BallMassBounds { lower, upper, depth }
    }

    /// Draws one point as a `bits`-bit dyadic vector. The uniform factor
    /// draws raw bits; the fractal factor walks digits until the cylinder
    /// is shorter than `2^-(bits+8)` and rounds its midpoint to the grid,
    /// so every cylinder event down to the grid scale has the exact law.
    pub fn sample_dyadic(&self, rng: &mut DetRng, bits: u32) -> DyadicPoint {
        let k = self.dimension_count();
        let numerators = match self {
            ProductMeasure::Lebesgue { .. } => (0..k).map(|_| rng.next_bits(bits)).collect(),
            ProductMeasure::Fractal(_) => (0..k).map(|_| fractal_dyadic_walk(rng, bits)).collect(),
        };
        DyadicPoint { numerators, bits }
    }
}

fn fractal_dyadic_walk(rng: &mut DetRng, bits: u32) -> BigUint {
    // Track the cylinder as numerators over the common denominator
    // D = ∏(2i+1); stop once D > 2^(bits+8), i.e. length < 2^-(bits+8).
    let mut left = BigUint::zero();
    let mut den = BigUint::one();
    let mut stage = 0usize;
    let target_bits = bits as u64 + 9;
    while den.bits() < target_bits {
        stage += 1;
        let slots = 2 * stage as u32 + 1;
        let digit = 1 + rng.next_below(2 * stage as u64) as u32;
        let slot = if digit <= stage as u32 { digit } else { digit + 1 };
        left = left * slots + (slot - 1);
        den *= slots;
        // left/den is now the child's left endpoint at the refined scale
    }
    // midpoint = (2*left + 1) / (2*den); numerator = round(mid * 2^bits)
    let two_left_plus = (&left << 1) + BigUint::one();
    let two_den = &den << 1;
    // round(a/b) = floor((2a + b) / (2b))
    ((&two_left_plus << (bits + 1)) + &two_den) / (&two_den << 1)
}

fn descend_mass(
    iv: &RationalInterval,
    stage: usize,
    mass: &BigRational,
    lo: &BigRational,
    hi: &BigRational,
    depth: usize,
    acc: &mut (BigRational, BigRational),
) {
    // Touching at a single endpoint carries no mass (the measure is atomless).
    if iv.right <= *lo || iv.left >= *hi {
        return;
    }
    if *lo <= iv.left && iv.right <= *hi {
        acc.0 += mass;
        acc.1 += mass;
        return;
    }
    if stage == depth {
        acc.1 += mass;
        return;
    }
    let child_stage = stage + 1;
    let child_mass = mass / BigRational::from_integer(BigInt::from(2 * child_stage as u64));
    for digit in 1..=2 * child_stage as u32 {
        let child = child_interval(iv, child_stage, digit);
        descend_mass(&child, child_stage, &child_mass, lo, hi, depth, acc);
    }
}

/// Least-squares local-dimension estimate at `x`: fits
/// `log m(B(x, δ·base_scale))` against `log δ` over the given ratios,
/// using midpoints of [`ProductMeasure::ball_mass_bounds`].
///
/// # Errors
///
/// [`Error::DegenerateScan`] if any ball-mass midpoint vanishes (raise
/// `depth`), or a fitting error for degenerate ratio lists.
///
/// # Panics
///
/// Panics if any ratio lies outside `(0,1]` or dimensions mismatch.
pub fn estimate_local_dimension(
    measure: &ProductMeasure,
    x: &[BigRational],
    base_scale: &BigRational,
    ratios: &[BigRational],
    depth: usize,
) -> Result<ExponentFit> {
    let mut xs = Vec::with_capacity(ratios.len());
    let mut ys = Vec::with_capacity(ratios.len());
    for delta in ratios {
        assert!(
            delta.is_positive() && *delta <= BigRational::one(),
            "ratio outside (0,1]"
        );
        let bounds = measure.ball_mass_bounds(x, &(delta * base_scale), depth);
        let mid = bounds.midpoint_f64();
        if mid <= 0.0 {
            return Err(Error::DegenerateScan(format!(
                "ball mass vanished at ratio {} and depth {depth}",
                ratio_to_f64(delta)
            )));
        }
        xs.push(ratio_to_f64(delta));
        ys.push(mid);
    }
    decay_exponent_fit(&xs, &ys)
}

/// Doubling-type scan: the minimum over sample points and scale pairs
/// `(δ, s)` of `m(B(x,δ)) / ((δ/s)^β · m(B(x,s)))`, evaluated on ball-mass
/// midpoints. A strictly positive minimum at exponent `β` witnesses the
/// doubling inequality on the scanned grid.
///
/// # Errors
///
/// [`Error::DegenerateScan`] if any ball-mass midpoint vanishes.
///
/// # Panics
///
/// Panics if some pair has `δ > s` or `s <= 0`.
pub fn federer_ratio_scan(
    measure: &ProductMeasure,
    points: &[Vec<BigRational>],
    scale_pairs: &[(BigRational, BigRational)],
    beta: f64,
    depth: usize,
) -> Result<f64> {
    let mut min_ratio = f64::INFINITY;
    for x in points {
        for (delta, s) in scale_pairs {
            assert!(delta <= s && s.is_positive(), "scale pair must satisfy 0 < δ <= s");
            let small = measure.ball_mass_bounds(x, delta, depth).midpoint_f64();
            let large = measure.ball_mass_bounds(x, s, depth).midpoint_f64();
            if small <= 0.0 || large <= 0.0 {
                return Err(Error::DegenerateScan(format!(
                    "ball mass vanished at scales ({}, {})",
                    ratio_to_f64(delta),
                    ratio_to_f64(s)
                )));
            }
            let scale = ratio_to_f64(delta) / ratio_to_f64(s);
            let ratio = small / (scale.powf(beta) * large);
            if ratio < min_ratio {
                min_ratio = ratio;
            }
        }
    }
    Ok(min_ratio)
}

/// Affine hyperplane `{x : <normal, x> = offset}` with a unit normal;
/// `ε`-neighborhoods of it are the slabs tested by the decay scan.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperplane {
    normal: Vec<f64>,
    offset: f64,
}

impl Hyperplane {
    /// Normalizes the normal vector to unit Euclidean length.
    ///
    /// # Errors
    ///
    /// [`Error::DegenerateScan`] if the normal is (numerically) zero.
    pub fn new(normal: Vec<f64>, offset: f64) -> Result<Self> {
        let norm = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 1e-300) {
            return Err(Error::DegenerateScan("hyperplane normal has zero length".into()));
        }
        Ok(Hyperplane {
            normal: normal.iter().map(|v| v / norm).collect(),
            offset: offset / norm,
        })
    }

    /// Unit normal components.
    pub fn normal(&self) -> &[f64] {
        &self.normal
    }

    /// Signed offset of the plane from the origin.
    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Signed distance of a point to the plane.
    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        self.normal.iter().zip(x).map(|(u, v)| u * v).sum::<f64>() - self.offset
    }
}

/// Bracket on `m(B ∩ slab) / m(B)` from one decay scan.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayRatioBounds {
    pub lower: f64,
    pub upper: f64,
    /// The bracket on the ball mass itself (diagnostic).
    pub ball_mass: (f64, f64),
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Placement {
    Inside,
    Outside,
    Partial,
}

/// Decay of mass near a hyperplane: brackets
/// `m(B_E(center, radius) ∩ {|<u,x> - c| < ε}) / m(B_E(center, radius))`
/// by classifying depth-`depth` product cylinders against the Euclidean
/// ball and the slab. Classification runs in `f64` with an outward margin,
/// and ambiguous boxes count toward the upper bound only, so the bracket
/// is conservative.
///
/// # Errors
///
/// [`Error::DegenerateScan`] if the ball's lower mass bound vanishes
/// (raise `depth` or the radius).
///
/// # Panics
///
/// Panics on dimension mismatch or non-positive `radius`/`eps`.
pub fn absolute_decay_scan(
    measure: &ProductMeasure,
    center: &[BigRational],
    radius: f64,
    plane: &Hyperplane,
    eps: f64,
    depth: usize,
) -> Result<DecayRatioBounds> {
    let k = measure.dimension_count();
    assert_eq!(center.len(), k, "center dimension mismatch");
    assert_eq!(plane.normal.len(), k, "plane dimension mismatch");
    assert!(radius > 0.0 && eps > 0.0, "radius and eps must be positive");

    let center_f: Vec<f64> = center.iter().map(ratio_to_f64).collect();
    let root = vec![RationalInterval::unit(); k];
    let mut acc = DecayAccumulator::default();
    classify_boxes(
        measure,
        &root,
        0,
        &BigRational::one(),
        &center_f,
        radius,
        plane,
        eps,
        depth,
        &mut acc,
    );

    let ball_lo = ratio_to_f64(&acc.ball_lower);
    let ball_hi = ratio_to_f64(&acc.ball_upper);
    if !(ball_lo > 0.0) {
        return Err(Error::DegenerateScan(
            "ball lower mass bound vanished; increase depth or radius".into(),
        ));
    }
    let in_lo = ratio_to_f64(&acc.in_lower);
    let in_hi = ratio_to_f64(&acc.in_upper);
    Ok(DecayRatioBounds {
        lower: (in_lo / ball_hi).min(1.0),
        upper: (in_hi / ball_lo).min(1.0),
        ball_mass: (ball_lo, ball_hi),
    })
}

#[derive(Default)]
struct DecayAccumulator {
    in_lower: BigRational,
    in_upper: BigRational,
    ball_lower: BigRational,
    ball_upper: BigRational,
}

#[allow(clippy::too_many_arguments)]
fn classify_boxes(
    measure: &ProductMeasure,
    boxes: &[RationalInterval],
    stage: usize,
    mass: &BigRational,
    center: &[f64],
    radius: f64,
    plane: &Hyperplane,
    eps: f64,
    depth: usize,
    acc: &mut DecayAccumulator,
) {
    let ball = classify_ball(boxes, center, radius);
    let slab = classify_slab(boxes, plane, eps);
    if ball == Placement::Outside {
        return;
    }
    let both = match (ball, slab) {
        (Placement::Inside, Placement::Inside) => Placement::Inside,
        (_, Placement::Outside) => Placement::Outside,
        _ => Placement::Partial,
    };
    let decided = ball == Placement::Inside && both != Placement::Partial;
    if decided || stage == depth {
        match ball {
            Placement::Inside => {
                acc.ball_lower += mass;
                acc.ball_upper += mass;
            }
            Placement::Partial => {
                acc.ball_upper += mass;
            }
            Placement::Outside => unreachable!(),
        }
        match both {
            Placement::Inside => {
                acc.in_lower += mass;
                acc.in_upper += mass;
            }
            Placement::Partial => {
                if ball != Placement::Outside {
                    acc.in_upper += mass;
                }
            }
            Placement::Outside => {}
        }
        return;
    }
    let child_stage = stage + 1;
    let (per_axis, child_mass) = match measure {
        ProductMeasure::Fractal(_) => {
            let branching = 2 * child_stage as u64;
            let m = mass
                / BigRational::from_integer(BigInt::from(branching))
                    .pow(boxes.len() as i32);
            (branching as u32, m)
        }
        ProductMeasure::Lebesgue { .. } => {
            let m = mass / BigRational::from_integer(BigInt::from(2)).pow(boxes.len() as i32);
            (2, m)
        }
    };
    let mut child = vec![RationalInterval::unit(); boxes.len()];
    enumerate_children(
        measure, boxes, &mut child, 0, per_axis, child_stage, &child_mass, center, radius,
        plane, eps, depth, acc,
    );
}

#[allow(clippy::too_many_arguments)]
fn enumerate_children(
    measure: &ProductMeasure,
    parent: &[RationalInterval],
    child: &mut Vec<RationalInterval>,
    axis: usize,
    per_axis: u32,
    child_stage: usize,
    child_mass: &BigRational,
    center: &[f64],
    radius: f64,
    plane: &Hyperplane,
    eps: f64,
    depth: usize,
    acc: &mut DecayAccumulator,
) {
    if axis == parent.len() {
        let snapshot = child.clone();
        classify_boxes(
            measure, &snapshot, child_stage, child_mass, center, radius, plane, eps, depth, acc,
        );
        return;
    }
    for idx in 1..=per_axis {
        child[axis] = match measure {
            ProductMeasure::Fractal(_) => child_interval(&parent[axis], child_stage, idx),
            ProductMeasure::Lebesgue { .. } => {
                let width = parent[axis].length()
                    / BigRational::from_integer(BigInt::from(2));
                let left = &parent[axis].left
                    + &width * BigRational::from_integer(BigInt::from(idx as i64 - 1));
                let right = &left + &width;
                RationalInterval { left, right }
            }
        };
        enumerate_children(
            measure, parent, child, axis + 1, per_axis, child_stage, child_mass, center, radius,
            plane, eps, depth, acc,
        );
    }
}

const CLASSIFY_MARGIN: f64 = 1e-12;

fn classify_ball(boxes: &[RationalInterval], center: &[f64], radius: f64) -> Placement {
    let mut dmin2 = 0.0;
    let mut dmax2 = 0.0;
    for (iv, &c) in boxes.iter().zip(center) {
        let lo = ratio_to_f64(&iv.left);
        let hi = ratio_to_f64(&iv.right);
        let below = (lo - c).max(0.0);
        let above = (c - hi).max(0.0);
        let near = below.max(above);
        let far = (c - lo).abs().max((hi - c).abs());
        dmin2 += near * near;
        dmax2 += far * far;
    }
    let r2 = radius * radius;
    let slack = CLASSIFY_MARGIN * (1.0 + r2);
    if dmax2 <= r2 - slack {
        Placement::Inside
    } else if dmin2 >= r2 + slack {
        Placement::Outside
    } else {
        Placement::Partial
    }
}

fn classify_slab(boxes: &[RationalInterval], plane: &Hyperplane, eps: f64) -> Placement {
    let mut tlo = -plane.offset;
    let mut thi = -plane.offset;
    for (iv, &u) in boxes.iter().zip(plane.normal.iter()) {
        let lo = ratio_to_f64(&iv.left) * u;
        let hi = ratio_to_f64(&iv.right) * u;
        tlo += lo.min(hi);
        thi += lo.max(hi);
    }
    let slack = CLASSIFY_MARGIN * (1.0 + eps);
    if tlo >= -eps + slack && thi <= eps - slack {
        Placement::Inside
    } else if thi <= -eps - slack || tlo >= eps + slack {
        Placement::Outside
    } else {
        Placement::Partial
    }
}
