//! Flat key=value experiment configuration: parsing, typed resolution,
//! and validation.
//!
//! A config file is a list of `key = value` lines; `#` starts a comment
//! and blank lines are ignored. The reserved keys `experiment`, `seed`,
//! `threads`, `format`, and `out` mirror the command-line flags (flags
//! win). Every other key is experiment-specific; unknown keys are
//! rejected so typos cannot silently fall back to defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use approxdyn::diophantine::SEARCH_BUDGET;
use approxdyn::lattice::MAX_DIMENSION;
use approxdyn::{FlowElement, FractalMeasure, ProductMeasure, TargetMatrix, TestFunction};
use num_bigint::BigInt;
use num_rational::BigRational;

/// The seven experiment kinds, one per subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    MeasureAudit,
    DirichletScan,
    Orbit,
    Escape,
    Equidist,
    CoveringCheck,
    EntropyDiagnostic,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::MeasureAudit,
        ExperimentKind::DirichletScan,
        ExperimentKind::Orbit,
        ExperimentKind::Escape,
        ExperimentKind::Equidist,
        ExperimentKind::CoveringCheck,
        ExperimentKind::EntropyDiagnostic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::MeasureAudit => "measure-audit",
            ExperimentKind::DirichletScan => "dirichlet-scan",
            ExperimentKind::Orbit => "orbit",
            ExperimentKind::Escape => "escape",
            ExperimentKind::Equidist => "equidist",
            ExperimentKind::CoveringCheck => "covering-check",
            ExperimentKind::EntropyDiagnostic => "entropy-diagnostic",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == text)
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Data-file format. The manifest is always JSON.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl OutputFormat {
    pub fn name(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "csv" => Some(OutputFormat::Csv),
            "json" => Some(OutputFormat::Json),
            _ => None,
        }
    }
}

/// Parses the flat key=value format. Returns the map or a message naming
/// the offending line.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value, got {raw:?}", idx + 1))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(format!("line {}: empty key", idx + 1));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(format!("line {}: duplicate key {key:?}", idx + 1));
        }
    }
    Ok(map)
}

/// A fully assembled run request: kind, reserved fields, and the
/// experiment-specific settings still in raw string form (typed by
/// [`resolve_params`]).
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    /// Worker threads; 0 means the library default.
    pub threads: usize,
    pub format: OutputFormat,
    pub out_dir: PathBuf,
    settings: BTreeMap<String, String>,
}

impl ExperimentConfig {
    /// Merges a parsed config file with command-line overrides. Errors
    /// are reserved-key problems (unparseable `seed`, an `experiment`
    /// entry that contradicts the subcommand, …).
    pub fn from_parts(
        kind: ExperimentKind,
        mut file: BTreeMap<String, String>,
        seed: Option<u64>,
        threads: Option<usize>,
        format: Option<OutputFormat>,
        out_dir: Option<PathBuf>,
    ) -> Result<Self, String> {
        if let Some(named) = file.remove("experiment") {
            if ExperimentKind::parse(&named) != Some(kind) {
                return Err(format!(
                    "experiment: config names {named:?} but the subcommand is {kind}"
                ));
            }
        }
        let seed = match (seed, file.remove("seed")) {
            (Some(s), _) => s,
            (None, Some(text)) => text
                .parse::<u64>()
                .map_err(|_| format!("seed: not a 64-bit unsigned integer: {text:?}"))?,
            (None, None) => 0,
        };
        let threads = match (threads, file.remove("threads")) {
            (Some(t), _) => t,
            (None, Some(text)) => text
                .parse::<usize>()
                .map_err(|_| format!("threads: not an unsigned integer: {text:?}"))?,
            (None, None) => 0,
        };
        let format = match (format, file.remove("format")) {
            (Some(f), _) => f,
            (None, Some(text)) => OutputFormat::parse(&text)
                .ok_or_else(|| format!("format: expected csv or json, got {text:?}"))?,
            (None, None) => OutputFormat::default(),
        };
        let out_dir = match (out_dir, file.remove("out")) {
            (Some(d), _) => d,
            (None, Some(text)) => PathBuf::from(text),
            (None, None) => PathBuf::from("."),
        };
        Ok(ExperimentConfig {
            kind,
            seed,
            threads,
            format,
            out_dir,
            settings: file,
        })
    }

    /// The experiment-specific settings as given (defaults not filled in).
    pub fn settings(&self) -> &BTreeMap<String, String> {
        &self.settings
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.settings.get(key).map(String::as_str)
    }
}

/// Validation: the full list of violations, one message per problem, each
/// prefixed with the offending field. Empty iff the run may start.
pub fn validate(cfg: &ExperimentConfig) -> Vec<String> {
    match resolve_params(cfg) {
        Ok(_) => Vec::new(),
        Err(violations) => violations,
    }
}

/// Typed parameters for one run, produced by [`resolve_params`].
#[derive(Debug, Clone)]
pub enum KindParams {
    MeasureAudit(MeasureAuditParams),
    DirichletScan(DirichletScanParams),
    Orbit(OrbitParams),
    Escape(EscapeParams),
    Equidist(EquidistParams),
    CoveringCheck(CoveringCheckParams),
    EntropyDiagnostic(EntropyDiagnosticParams),
}

#[derive(Debug, Clone)]
pub struct MeasureAuditParams {
    pub stages: usize,
    pub code: Option<Vec<u32>>,
    pub local_dims: usize,
    pub local_depth: usize,
    pub local_scale: BigRational,
    pub local_ratio_count: usize,
    pub band_lo: f64,
    pub band_hi: f64,
    pub dims: usize,
    pub federer_beta: f64,
    pub federer_points: usize,
    pub federer_pairs: usize,
    pub federer_depth: usize,
    pub decay_radius: f64,
    pub decay_eps_list: Vec<f64>,
    pub decay_depth: usize,
}

/// How a scan or orbit target is chosen.
#[derive(Debug, Clone)]
pub enum TargetSpec {
    /// One explicit matrix.
    Explicit(TargetMatrix),
    /// Coordinates drawn uniformly from `[0,1)`.
    Lebesgue,
    /// Coordinates drawn from the self-similar measure.
    Fractal,
}

#[derive(Debug, Clone)]
pub struct DirichletScanParams {
    pub m: usize,
    pub n: usize,
    pub target: TargetSpec,
    pub samples: usize,
    pub target_bits: u32,
    pub sigma: f64,
    pub big_n_min: u64,
    pub big_n_max: u64,
    pub cross_check_lattice: bool,
    pub route_tol: f64,
    pub expect: Expectation,
    pub expect_failing_from: u64,
    pub expect_fraction: f64,
}

/// Optional verdict the scan is expected to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expectation {
    /// No expectation; the run only checks structural invariants.
    None,
    /// Every sample passes at every scanned `N`.
    Holds,
    /// At least `expect_fraction` of samples fail at some
    /// `N ≥ expect_failing_from`.
    Fails,
}

#[derive(Debug, Clone)]
pub struct OrbitParams {
    pub flow: FlowElement,
    pub start: TargetSpec,
    pub start_bits: u32,
    pub k: usize,
    pub eps_grid: Vec<f64>,
    pub sigma_grid: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EscapeParams {
    pub flow: FlowElement,
    pub measure: ProductMeasure,
    pub k: usize,
    pub samples: usize,
    pub eps_grid: Vec<f64>,
    pub max_small_eps_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct EquidistParams {
    pub flow: FlowElement,
    pub measure: ProductMeasure,
    pub k: usize,
    pub samples: usize,
    pub pooled: bool,
    pub test_function: TestFunction,
    pub haar_count: usize,
    pub ks_threshold: f64,
}

#[derive(Debug, Clone)]
pub struct CoveringCheckParams {
    pub i_max: u32,
    pub j_max: u32,
    pub t_list: Vec<f64>,
    pub eps_list: Vec<f64>,
    pub s: f64,
    pub plane_configs: usize,
    pub plane_dim: usize,
    pub probes: usize,
}

#[derive(Debug, Clone)]
pub struct EntropyDiagnosticParams {
    pub cells_max: usize,
    pub m: usize,
    pub n: usize,
    pub big_n: u32,
    pub oracle_trials: usize,
    pub oracle_tol: f64,
    pub measure: ProductMeasure,
    pub k: usize,
    pub samples: usize,
    pub block_len: usize,
    pub cell_count: usize,
}

/// Collects every value needed to run `cfg`, or the complete violation
/// list. A returned `Ok` guarantees the runner's preconditions (dimension
/// caps, search budgets, grids nonempty, `σ ∈ (0,1)`, `ε ∈ (0,1)`).
pub fn resolve_params(cfg: &ExperimentConfig) -> Result<KindParams, Vec<String>> {
    let mut r = Resolver::new(cfg);
    let params = match cfg.kind {
        ExperimentKind::MeasureAudit => resolve_measure_audit(&mut r).map(KindParams::MeasureAudit),
        ExperimentKind::DirichletScan => {
            resolve_dirichlet_scan(&mut r).map(KindParams::DirichletScan)
        }
        ExperimentKind::Orbit => resolve_orbit(&mut r).map(KindParams::Orbit),
        ExperimentKind::Escape => resolve_escape(&mut r).map(KindParams::Escape),
        ExperimentKind::Equidist => resolve_equidist(&mut r).map(KindParams::Equidist),
        ExperimentKind::CoveringCheck => {
            resolve_covering_check(&mut r).map(KindParams::CoveringCheck)
        }
        ExperimentKind::EntropyDiagnostic => {
            resolve_entropy_diagnostic(&mut r).map(KindParams::EntropyDiagnostic)
        }
    };
    r.finish(params)
}

/// Accumulates violations while reading keys, and remembers which keys
/// were touched so leftovers can be reported as unknown.
struct Resolver<'a> {
    cfg: &'a ExperimentConfig,
    violations: Vec<String>,
    seen: Vec<&'static str>,
}

impl<'a> Resolver<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Self {
        Resolver {
            cfg,
            violations: Vec::new(),
            seen: Vec::new(),
        }
    }

    fn fail(&mut self, message: String) {
        self.violations.push(message);
    }

    fn raw(&mut self, key: &'static str) -> Option<&'a str> {
        self.seen.push(key);
        self.cfg.raw(key)
    }

    fn parsed<T: FromStr>(&mut self, key: &'static str, default: T, what: &str) -> T {
        match self.raw(key) {
            None => default,
            Some(text) => match text.parse::<T>() {
                Ok(v) => v,
                Err(_) => {
                    self.fail(format!("{key}: expected {what}, got {text:?}"));
                    default
                }
            },
        }
    }

    fn usize_in(&mut self, key: &'static str, default: usize, lo: usize, hi: usize) -> usize {
        let v = self.parsed(key, default, "an unsigned integer");
        if v < lo || v > hi {
            self.fail(format!("{key}: {v} outside {lo}..={hi}"));
            default
        } else {
            v
        }
    }

    fn u64_min(&mut self, key: &'static str, default: u64, lo: u64) -> u64 {
        let v = self.parsed(key, default, "an unsigned integer");
        if v < lo {
            self.fail(format!("{key}: {v} below minimum {lo}"));
            default
        } else {
            v
        }
    }

    fn f64_finite(&mut self, key: &'static str, default: f64) -> f64 {
        let v = self.parsed(key, default, "a number");
        if v.is_finite() {
            v
        } else {
            self.fail(format!("{key}: must be finite"));
            default
        }
    }

    /// A probability-like parameter: strict interior of `(0, 1)`.
    fn unit_open(&mut self, key: &'static str, default: f64, what: &str) -> f64 {
        let v = self.f64_finite(key, default);
        if v > 0.0 && v < 1.0 {
            v
        } else {
            self.fail(format!("{key}: {what} out of (0,1), got {v}"));
            default
        }
    }

    fn f64_list(&mut self, key: &'static str, default: &[f64]) -> Vec<f64> {
        match self.raw(key) {
            None => default.to_vec(),
            Some(text) => {
                let mut out = Vec::new();
                for part in text.split(',') {
                    match part.trim().parse::<f64>() {
                        Ok(v) if v.is_finite() => out.push(v),
                        _ => {
                            self.fail(format!("{key}: bad list entry {part:?}"));
                            return default.to_vec();
                        }
                    }
                }
                if out.is_empty() {
                    self.fail(format!("{key}: empty list"));
                    default.to_vec()
                } else {
                    out
                }
            }
        }
    }

    fn eps_grid(&mut self, key: &'static str, default: &[f64]) -> Vec<f64> {
        let list = self.f64_list(key, default);
        for &eps in &list {
            if !(eps > 0.0 && eps < 1.0) {
                self.fail(format!("{key}: entry out of (0,1), got {eps}"));
                return default.to_vec();
            }
        }
        list
    }

    fn choice(
        &mut self,
        key: &'static str,
        default: &'static str,
        options: &[&'static str],
    ) -> &'a str {
        match self.raw(key) {
            None => default,
            Some(text) if options.contains(&text) => text,
            Some(text) => {
                self.fail(format!(
                    "{key}: expected one of {}, got {text:?}",
                    options.join("|")
                ));
                default
            }
        }
    }

    fn rational(&mut self, key: &'static str, default: &str) -> BigRational {
        let text = self.raw(key).unwrap_or(default).to_string();
        match parse_rational(&text) {
            Ok(v) => v,
            Err(e) => {
                self.fail(format!("{key}: {e}"));
                parse_rational(default).expect("default parses")
            }
        }
    }

    fn finish(mut self, params: Result<KindParams, ()>) -> Result<KindParams, Vec<String>> {
        for key in self.cfg.settings.keys() {
            if !self.seen.contains(&key.as_str()) {
                self.violations.push(format!("{key}: unknown key"));
            }
        }
        match params {
            Ok(p) if self.violations.is_empty() => Ok(p),
            _ => {
                if self.violations.is_empty() {
                    self.violations.push("config: unresolvable".into());
                }
                Err(self.violations)
            }
        }
    }
}

/// Parses `a/b`, an integer, or a decimal literal into an exact rational
/// (decimals are read digit-by-digit, not through `f64`).
pub fn parse_rational(text: &str) -> Result<BigRational, String> {
    let text = text.trim();
    if let Some((num, den)) = text.split_once('/') {
        let num = BigInt::from_str(num.trim()).map_err(|_| format!("bad numerator {num:?}"))?;
        let den = BigInt::from_str(den.trim()).map_err(|_| format!("bad denominator {den:?}"))?;
        if den == BigInt::from(0) {
            return Err("zero denominator".into());
        }
        return Ok(BigRational::new(num, den));
    }
    if let Some((whole, frac)) = text.split_once('.') {
        let sign = if whole.trim_start().starts_with('-') { -1 } else { 1 };
        let whole_int =
            BigInt::from_str(whole.trim()).map_err(|_| format!("bad number {text:?}"))?;
        if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format!("bad number {text:?}"));
        }
        let scale = BigInt::from(10u32).pow(frac.len() as u32);
        let frac_int = BigInt::from_str(frac).map_err(|_| format!("bad number {text:?}"))?;
        return Ok(BigRational::new(
            whole_int * &scale + BigInt::from(sign) * frac_int,
            scale,
        ));
    }
    BigInt::from_str(text)
        .map(BigRational::from_integer)
        .map_err(|_| format!("bad number {text:?}"))
}

fn resolve_measure_audit(r: &mut Resolver) -> Result<MeasureAuditParams, ()> {
    let stages = r.usize_in("stages", 20, 1, 100);
    let code = match r.raw("code") {
        None => None,
        Some(text) => {
            let mut digits = Vec::new();
            let mut ok = true;
            for part in text.split(',') {
                match part.trim().parse::<u32>() {
                    Ok(d) => digits.push(d),
                    Err(_) => {
                        r.fail(format!("code: bad digit {part:?}"));
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                for (idx, &d) in digits.iter().enumerate() {
                    let max = 2 * (idx as u32 + 1);
                    if d < 1 || d > max {
                        r.fail(format!(
                            "code: digit {d} at stage {} outside 1..={max}",
                            idx + 1
                        ));
                    }
                }
                Some(digits)
            } else {
                None
            }
        }
    };
    let local_dims = r.usize_in("local_dims", 1, 1, 3);
    let local_depth = r.usize_in("local_depth", 12, 1, 30);
    let local_scale = r.rational("local_scale", "1/15");
    if !(local_scale > BigRational::from_integer(0.into())
        && local_scale <= BigRational::new(1.into(), 2.into()))
    {
        r.fail("local_scale: must lie in (0, 1/2]".into());
    }
    let local_ratio_count = r.usize_in("local_ratio_count", 6, 2, 12);
    let band_lo = r.f64_finite("band_lo", 0.85);
    let band_hi = r.f64_finite("band_hi", 1.05);
    if !(band_lo > 0.0 && band_lo < band_hi) {
        r.fail(format!("band_lo: need 0 < band_lo < band_hi, got [{band_lo}, {band_hi}]"));
    }
    let dims = r.usize_in("dims", 2, 1, 3);
    let federer_beta = r.f64_finite("federer_beta", 2.0);
    if federer_beta <= 0.0 {
        r.fail(format!("federer_beta: must be positive, got {federer_beta}"));
    }
    let federer_points = r.usize_in("federer_points", 25, 1, 1000);
    let federer_pairs = r.usize_in("federer_pairs", 4, 1, 8);
    let federer_depth = r.usize_in("federer_depth", 10, 1, 30);
    let decay_radius = r.f64_finite("decay_radius", 0.25);
    if !(decay_radius > 0.0 && decay_radius <= 0.5) {
        r.fail(format!("decay_radius: must lie in (0, 1/2], got {decay_radius}"));
    }
    let decay_eps_list = r.eps_grid("decay_eps_list", &[0.02, 0.04, 0.08, 0.16]);
    let decay_depth = r.usize_in("decay_depth", 9, 1, 12);
    Ok(MeasureAuditParams {
        stages,
        code,
        local_dims,
        local_depth,
        local_scale,
        local_ratio_count,
        band_lo,
        band_hi,
        dims,
        federer_beta,
        federer_points,
        federer_pairs,
        federer_depth,
        decay_radius,
        decay_eps_list,
        decay_depth,
    })
}

/// Parses `target`/`start`-style keys: a sampling measure name or an
/// explicit comma-separated entry list (all-rational lists stay exact).
fn resolve_target(
    r: &mut Resolver,
    key: &'static str,
    m: usize,
    n: usize,
    default: &'static str,
) -> TargetSpec {
    let text = r.raw(key).unwrap_or(default).to_string();
    match text.as_str() {
        "lebesgue" => return TargetSpec::Lebesgue,
        "fractal" => return TargetSpec::Fractal,
        _ => {}
    }
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != m * n {
        r.fail(format!(
            "{key}: expected lebesgue, fractal, or {} entries, got {}",
            m * n,
            parts.len()
        ));
        return TargetSpec::Lebesgue;
    }
    let rationals: Result<Vec<BigRational>, String> =
        parts.iter().map(|p| parse_rational(p)).collect();
    match rationals {
        Ok(entries) => TargetSpec::Explicit(TargetMatrix::new_rational(m, n, entries)),
        Err(_) => {
            let mut floats = Vec::with_capacity(parts.len());
            for p in &parts {
                match p.parse::<f64>() {
                    Ok(v) if v.is_finite() => floats.push(v),
                    _ => {
                        r.fail(format!("{key}: bad entry {p:?}"));
                        return TargetSpec::Lebesgue;
                    }
                }
            }
            TargetSpec::Explicit(TargetMatrix::new_f64(m, n, floats))
        }
    }
}

fn resolve_dirichlet_scan(r: &mut Resolver) -> Result<DirichletScanParams, ()> {
    let m = r.usize_in("m", 1, 1, 4);
    let n = r.usize_in("n", 1, 1, 4);
    let target = resolve_target(r, "target", m, n, "0");
    let samples = r.usize_in("samples", 1, 1, 100_000);
    if matches!(target, TargetSpec::Explicit(_)) && samples != 1 {
        r.fail("samples: only sampled targets (lebesgue, fractal) admit samples > 1".into());
    }
    let target_bits = r.usize_in("target_bits", 40, 1, 52) as u32;
    let sigma = r.unit_open("sigma", 0.5, "sigma");
    let big_n_min = r.u64_min("big_n_min", 2, 1);
    let big_n_max = r.u64_min("big_n_max", 50, 1);
    if big_n_min > big_n_max {
        r.fail(format!(
            "big_n_min: range [{big_n_min}, {big_n_max}] is empty"
        ));
    }
    // Mirror the core search-budget guard so a doomed scan is rejected
    // up front rather than erroring halfway through the row set.
    let candidates = (big_n_max as u128)
        .checked_pow(n as u32)
        .and_then(|v| v.checked_mul(2))
        .and_then(|v| v.checked_add(1))
        .and_then(|v| v.checked_pow(m as u32));
    match candidates {
        Some(c) if c <= SEARCH_BUDGET => {}
        _ => r.fail(format!(
            "big_n_max: witness search budget cap ((2·N^n+1)^m exceeds {SEARCH_BUDGET} at N = {big_n_max})"
        )),
    }
    let route = r.choice("route", "direct", &["direct", "both"]);
    let cross_check_lattice = route == "both";
    if cross_check_lattice {
        if m + n > MAX_DIMENSION {
            r.fail(format!(
                "route: enumeration dimension cap (m+n = {} exceeds {MAX_DIMENSION})",
                m + n
            ));
        }
        if big_n_max > u32::MAX as u64 {
            r.fail(format!("big_n_max: lattice route needs N <= {}", u32::MAX));
        }
    }
    let route_tol = r.f64_finite("route_tol", 1e-9);
    if route_tol <= 0.0 {
        r.fail(format!("route_tol: must be positive, got {route_tol}"));
    }
    let expect = match r.choice("expect", "none", &["none", "holds", "fails"]) {
        "holds" => Expectation::Holds,
        "fails" => Expectation::Fails,
        _ => Expectation::None,
    };
    let expect_failing_from = r.u64_min("expect_failing_from", big_n_min, 1);
    let expect_fraction = r.f64_finite("expect_fraction", 1.0);
    if !(expect_fraction > 0.0 && expect_fraction <= 1.0) {
        r.fail(format!(
            "expect_fraction: must lie in (0, 1], got {expect_fraction}"
        ));
    }
    Ok(DirichletScanParams {
        m,
        n,
        target,
        samples,
        target_bits,
        sigma,
        big_n_min,
        big_n_max,
        cross_check_lattice,
        route_tol,
        expect,
        expect_failing_from,
        expect_fraction,
    })
}

/// Reads the flow keys (`family`, `m`, `n`, `big_n`, `t`) shared by the
/// orbit-driven experiments.
fn resolve_flow(r: &mut Resolver, default_family: &'static str) -> Result<FlowElement, ()> {
    let family = r.choice("family", default_family, &["split", "klw"]);
    match family {
        "split" => {
            let m = r.usize_in("m", 1, 1, 4);
            let n = r.usize_in("n", 1, 1, 4);
            let big_n = r.usize_in("big_n", 2, 1, u32::MAX as usize) as u32;
            if let Some(text) = r.raw("t") {
                r.fail(format!("t: the split family takes big_n, not t = {text:?}"));
            }
            if m + n > MAX_DIMENSION {
                r.fail(format!(
                    "m: enumeration dimension cap (m+n = {} exceeds {MAX_DIMENSION})",
                    m + n
                ));
                return Err(());
            }
            Ok(FlowElement::new_split(m, n, big_n))
        }
        _ => {
            let n = r.usize_in("n", 1, 1, MAX_DIMENSION - 1);
            let t = r.f64_finite("t", std::f64::consts::LN_2);
            if let Some(text) = r.raw("m") {
                if text.trim() != "1" {
                    r.fail(format!("m: the klw family has one contracting row, got {text:?}"));
                }
            }
            if let Some(text) = r.raw("big_n") {
                r.fail(format!("big_n: the klw family takes t, not big_n = {text:?}"));
            }
            if t <= 0.0 {
                r.fail(format!("t: must be positive, got {t}"));
                return Err(());
            }
            Ok(FlowElement::new_klw(n, t))
        }
    }
}

fn measure_for_flow(
    r: &mut Resolver,
    key: &'static str,
    default: &'static str,
    flow: &FlowElement,
    depth_cap: usize,
) -> ProductMeasure {
    let dims = flow.target_rows() * flow.target_cols();
    match r.choice(key, default, &["lebesgue", "fractal"]) {
        "fractal" => ProductMeasure::Fractal(FractalMeasure::new(dims, depth_cap)),
        _ => ProductMeasure::Lebesgue {
            dimension_count: dims,
        },
    }
}

fn resolve_orbit(r: &mut Resolver) -> Result<OrbitParams, ()> {
    let flow = resolve_flow(r, "split")?;
    let k = r.usize_in("k", 1000, 1, 50_000);
    let start = resolve_target(r, "start", flow.target_rows(), flow.target_cols(), "lebesgue");
    let start_bits = r.usize_in("start_bits", 0, 0, 1_000_000) as u32;
    let eps_grid = r.eps_grid("eps_grid", &[0.05, 0.1, 0.2]);
    let sigma_grid = r.eps_grid("sigma_grid", &[0.5, 0.75]);
    Ok(OrbitParams {
        flow,
        start,
        start_bits,
        k,
        eps_grid,
        sigma_grid,
    })
}

fn resolve_escape(r: &mut Resolver) -> Result<EscapeParams, ()> {
    let flow = resolve_flow(r, "klw")?;
    let k = r.usize_in("k", 500, 1, 50_000);
    let samples = r.usize_in("samples", 500, 1, 1_000_000);
    let measure = measure_for_flow(r, "measure", "fractal", &flow, 64);
    let eps_grid = r.eps_grid(
        "eps_grid",
        &[0.02, 0.04, 0.06, 0.08, 0.1, 0.12, 0.14, 0.16, 0.18, 0.2],
    );
    let max_small_eps_fraction = r.f64_finite("max_small_eps_fraction", 0.05);
    if !(0.0..=1.0).contains(&max_small_eps_fraction) {
        r.fail(format!(
            "max_small_eps_fraction: must lie in [0, 1], got {max_small_eps_fraction}"
        ));
    }
    Ok(EscapeParams {
        flow,
        measure,
        k,
        samples,
        eps_grid,
        max_small_eps_fraction,
    })
}

fn resolve_equidist(r: &mut Resolver) -> Result<EquidistParams, ()> {
    let flow = resolve_flow(r, "split")?;
    let k = r.usize_in("k", 2000, 1, 50_000);
    let samples = r.usize_in("samples", 2000, 1, 1_000_000);
    let measure = measure_for_flow(r, "measure", "fractal", &flow, 64);
    let pooled = r.choice("statistic", "cesaro", &["cesaro", "pooled"]) == "pooled";
    let tf_name = r.choice(
        "test_function",
        "lambda1-sup",
        &["lambda1-sup", "lambda1-euc", "f-eps", "k-sigma", "k-sigma-bump"],
    );
    let test_eps = r.unit_open("test_eps", 0.1, "test_eps");
    let test_sigma = r.unit_open("test_sigma", 0.5, "test_sigma");
    let test_width = r.f64_finite("test_width", 0.1);
    if tf_name == "k-sigma-bump" && !(test_width > 0.0 && test_width <= test_sigma) {
        r.fail(format!(
            "test_width: must lie in (0, test_sigma], got {test_width}"
        ));
    }
    let test_function = match tf_name {
        "lambda1-sup" => TestFunction::Lambda1Sup,
        "lambda1-euc" => TestFunction::Lambda1Euc,
        "f-eps" => TestFunction::FEpsIndicator { eps: test_eps },
        "k-sigma" => TestFunction::KSigmaIndicator { sigma: test_sigma },
        _ => TestFunction::KSigmaBump {
            sigma: test_sigma,
            width: test_width,
        },
    };
    let haar_count = r.usize_in("haar_count", 0, 0, 10_000_000);
    if haar_count > 0 {
        if flow.dimension() != 2 {
            r.fail(format!(
                "haar_count: the Haar oracle covers dimension 2 only (flow has d = {})",
                flow.dimension()
            ));
        }
        if !matches!(
            test_function,
            TestFunction::Lambda1Sup | TestFunction::Lambda1Euc
        ) {
            r.fail("haar_count: KS comparison needs test_function = lambda1-sup or lambda1-euc".into());
        }
        if !pooled {
            r.fail("haar_count: KS comparison needs statistic = pooled".into());
        }
    }
    let ks_threshold = r.unit_open("ks_threshold", 0.05, "ks_threshold");
    Ok(EquidistParams {
        flow,
        measure,
        k,
        samples,
        pooled,
        test_function,
        haar_count,
        ks_threshold,
    })
}

fn resolve_covering_check(r: &mut Resolver) -> Result<CoveringCheckParams, ()> {
    let i_max = r.usize_in("i_max", 10, 1, 30) as u32;
    let j_max = r.usize_in("j_max", 10, 1, 30) as u32;
    let t_list = r.f64_list("t_list", &[0.5, 1.0, 2.0]);
    for &t in &t_list {
        if t <= 0.0 {
            r.fail(format!("t_list: t must be positive, got {t}"));
        }
    }
    let eps_list = r.eps_grid("eps_list", &[0.01, 0.1, 0.4]);
    let t_min = t_list.iter().copied().fold(f64::INFINITY, f64::min);
    for &eps in &eps_list {
        if eps >= t_min {
            r.fail(format!("eps_list: need eps < every t, got eps = {eps} with t = {t_min}"));
        }
    }
    let s = r.f64_finite("s", 1.0);
    if s <= 0.0 {
        r.fail(format!("s: must be positive, got {s}"));
    }
    let plane_configs = r.usize_in("plane_configs", 10_000, 1, 1_000_000);
    let plane_dim = r.usize_in("plane_dim", 2, 2, 3);
    let probes = r.usize_in("probes", 16, 1, 10_000);
    Ok(CoveringCheckParams {
        i_max,
        j_max,
        t_list,
        eps_list,
        s,
        plane_configs,
        plane_dim,
        probes,
    })
}

fn resolve_entropy_diagnostic(r: &mut Resolver) -> Result<EntropyDiagnosticParams, ()> {
    let cells_max = r.usize_in("cells_max", 64, 2, 4096);
    let m = r.usize_in("m", 1, 1, 4);
    let n = r.usize_in("n", 1, 1, 4);
    let big_n = r.usize_in("big_n", 2, 1, u32::MAX as usize) as u32;
    if m + n > MAX_DIMENSION {
        r.fail(format!(
            "m: enumeration dimension cap (m+n = {} exceeds {MAX_DIMENSION})",
            m + n
        ));
        return Err(());
    }
    let flow = FlowElement::new_split(m, n, big_n);
    let oracle_trials = r.usize_in("oracle_trials", 100, 1, 1_000_000);
    let oracle_tol = r.f64_finite("oracle_tol", 1e-12);
    if oracle_tol <= 0.0 {
        r.fail(format!("oracle_tol: must be positive, got {oracle_tol}"));
    }
    let measure = measure_for_flow(r, "measure", "lebesgue", &flow, 64);
    let k = r.usize_in("k", 512, 2, 50_000);
    let samples = r.usize_in("samples", 32, 1, 100_000);
    let block_len = r.usize_in("block_len", 2, 1, 4);
    let cell_count = r.usize_in("cell_count", 4, 2, 64);
    if block_len >= k {
        r.fail(format!(
            "block_len: must be smaller than k, got {block_len} with k = {k}"
        ));
    }
    Ok(EntropyDiagnosticParams {
        cells_max,
        m,
        n,
        big_n,
        oracle_trials,
        oracle_tol,
        measure,
        k,
        samples,
        block_len,
        cell_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config_for(kind: ExperimentKind, text: &str) -> ExperimentConfig {
        ExperimentConfig::from_parts(
            kind,
            parse_key_values(text).expect("parse"),
            None,
            None,
            None,
            None,
        )
        .expect("assemble")
    }

    #[test]
    fn key_value_parsing_strips_comments_and_blank_lines() {
        let map = parse_key_values("# header\n  sigma = 0.5  # inline\n\nk=12\n").unwrap();
        assert_eq!(map.get("sigma").map(String::as_str), Some("0.5"));
        assert_eq!(map.get("k").map(String::as_str), Some("12"));
        assert_eq!(map.len(), 2);
    }

    #[test]
    fn duplicate_and_malformed_lines_are_rejected() {
        assert!(parse_key_values("a = 1\na = 2\n").is_err());
        assert!(parse_key_values("just words\n").is_err());
        assert!(parse_key_values("= 3\n").is_err());
    }

    #[test]
    fn defaults_validate_for_every_kind() {
        for kind in ExperimentKind::ALL {
            let cfg = config_for(kind, "");
            assert_eq!(validate(&cfg), Vec::<String>::new(), "kind {kind}");
        }
    }

    #[test]
    fn sigma_outside_unit_interval_is_flagged() {
        let cfg = config_for(ExperimentKind::DirichletScan, "sigma = 1.5\n");
        let violations = validate(&cfg);
        assert!(
            violations.iter().any(|v| v.contains("sigma out of (0,1)")),
            "{violations:?}"
        );
    }

    #[test]
    fn oversized_lattice_dimension_is_flagged() {
        let cfg = config_for(
            ExperimentKind::DirichletScan,
            "m = 3\nn = 4\nroute = both\nbig_n_max = 3\n",
        );
        let violations = validate(&cfg);
        assert!(
            violations.iter().any(|v| v.contains("enumeration dimension cap")),
            "{violations:?}"
        );
    }

    #[test]
    fn search_budget_overflow_is_flagged_before_running() {
        let cfg = config_for(
            ExperimentKind::DirichletScan,
            "m = 2\nn = 2\nbig_n_max = 100\n",
        );
        let violations = validate(&cfg);
        assert!(
            violations.iter().any(|v| v.contains("witness search budget cap")),
            "{violations:?}"
        );
    }

    #[test]
    fn unknown_keys_are_flagged() {
        let cfg = config_for(ExperimentKind::Escape, "samples = 5\nspeling = 3\n");
        let violations = validate(&cfg);
        assert_eq!(violations, vec!["speling: unknown key".to_string()]);
    }

    #[test]
    fn flag_overrides_beat_file_values() {
        let cfg = ExperimentConfig::from_parts(
            ExperimentKind::Orbit,
            parse_key_values("seed = 5\nthreads = 2\nformat = json\nout = /tmp/x\n").unwrap(),
            Some(9),
            Some(1),
            Some(OutputFormat::Csv),
            Some(PathBuf::from("/tmp/y")),
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.threads, 1);
        assert_eq!(cfg.format, OutputFormat::Csv);
        assert_eq!(cfg.out_dir, PathBuf::from("/tmp/y"));
    }

    #[test]
    fn experiment_key_must_match_subcommand() {
        let err = ExperimentConfig::from_parts(
            ExperimentKind::Orbit,
            parse_key_values("experiment = escape\n").unwrap(),
            None,
            None,
            None,
            None,
        )
        .unwrap_err();
        assert!(err.contains("experiment"), "{err}");
    }

    #[test]
    fn rational_parser_reads_fractions_decimals_and_integers() {
        assert_eq!(
            parse_rational("3/4").unwrap(),
            BigRational::new(3.into(), 4.into())
        );
        assert_eq!(
            parse_rational("-0.25").unwrap(),
            BigRational::new((-1).into(), 4.into())
        );
        assert_eq!(parse_rational("7").unwrap(), BigRational::from_integer(7.into()));
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("0.x").is_err());
    }

    #[test]
    fn explicit_rational_targets_stay_exact() {
        let cfg = config_for(ExperimentKind::DirichletScan, "target = 1/3\n");
        match resolve_params(&cfg).unwrap() {
            KindParams::DirichletScan(p) => match p.target {
                TargetSpec::Explicit(TargetMatrix::Rational { .. }) => {}
                other => panic!("expected exact target, got {other:?}"),
            },
            _ => unreachable!(),
        }
    }

    #[test]
    fn klw_flow_rejects_split_only_keys() {
        let cfg = config_for(ExperimentKind::Escape, "family = klw\nbig_n = 4\n");
        let violations = validate(&cfg);
        assert!(violations.iter().any(|v| v.starts_with("big_n:")), "{violations:?}");
    }

    #[test]
    fn haar_comparison_requires_a_pooled_length_statistic() {
        let cfg = config_for(
            ExperimentKind::Equidist,
            "haar_count = 1000\ntest_function = f-eps\n",
        );
        let violations = validate(&cfg);
        assert!(violations.iter().any(|v| v.contains("lambda1-sup")), "{violations:?}");
        assert!(violations.iter().any(|v| v.contains("pooled")), "{violations:?}");
    }
}
