//! Numerical laboratory for Dirichlet-type Diophantine approximation and
//! the dynamics of diagonal flows on spaces of unimodular lattices.
//!
//! The crate has four pillars:
//!
//! * [`diophantine`] — exhaustive witness search for the quality
//!   `sigma_star(Y, N)` of a target matrix, scaled-ball membership tests
//!   and range scans, and a continued-fraction oracle for scalars.
//! * [`lattice`] — exact arbitrary-precision lattice bases, diagonal
//!   flows, shortest vectors in two norms, orbit statistics over sampled
//!   ensembles, and a Haar-measure reference sampler for dimension 2.
//! * [`fractal`] — an exact self-similar measure on a Cantor-type subset
//!   of `[0, 1]` (stage `i` keeps `2i` of `2i + 1` equal slots), product
//!   measures, dyadic samplers, and mass/dimension/decay scans.
//! * [`analysis`] — entropy estimates, covering-number checks, power-law
//!   fits, and Kolmogorov–Smirnov distances used to compare sampled
//!   statistics against reference laws.
//!
//! Randomness everywhere flows through [`rng::DetRng`], a counter-based
//! generator with independent streams, so every ensemble computation is
//! reproducible from a single seed regardless of thread count.

pub mod analysis;
pub mod diophantine;
pub mod error;
pub mod fractal;
pub mod lattice;
pub mod rng;
mod util;

pub use analysis::{
    assign_quantile_cells, decay_exponent_fit, ks_distance, max_entropy_bound,
    refined_entropy_rate, shannon_entropy, CoveringReport, DiscreteDistribution,
    EmpiricalDistribution, EntropyRateReport, ExponentFit,
};
pub use diophantine::{
    best_witness, continued_fraction_quality, di_sigma_holds, di_sigma_scan,
    dirichlet_quality_via_lattice, ApproxWitness, DiSigmaScan, QualityReport, TargetMatrix,
};
pub use error::{Error, Result};
pub use fractal::{
    BallMassBounds, DyadicPoint, FractalMeasure, Hyperplane, IntervalCode, ProductMeasure,
    RationalInterval,
};
pub use lattice::{
    cesaro_statistic, escape_fraction, flow_step, haar_lambda1_sample, haar_sample_sl2,
    in_f_epsilon, k_sigma_member, phi_embed, phi_embed_dyadic, pooled_orbit_values,
    sample_start_basis, shortest_vector, single_orbit_statistics, CesaroTrace, EscapeEntry,
    EscapeReport, FlowElement, LatticeBasis, NormKind, OrbitStatistics, ShortestVector,
    TestFunction,
};
pub use rng::DetRng;
