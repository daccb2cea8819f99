//! Executes a resolved experiment, writes its data tables and manifest,
//! and reports per-check pass/fail outcomes.
//!
//! Data tables are plain rows of strings so CSV and JSON emission share
//! one code path. All floating-point values are formatted with the
//! shortest round-trip representation, which makes serial reruns of the
//! same seed byte-identical. A core error mid-experiment (budget
//! overruns, numerical blowup) still flushes the tables built so far and
//! is recorded in the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use approxdyn::analysis::{
    decay_exponent_fit, hyperplane_cover_check, ks_distance, tube_cover_bound_check,
};
use approxdyn::fractal::{
    absolute_decay_scan, estimate_local_dimension, federer_ratio_scan, interval_of_code,
    mass_of_code, remaining_set_measure, FractalMeasure, Hyperplane, IntervalCode,
    ProductMeasure,
};
use approxdyn::lattice::sample_start_basis;
use approxdyn::{
    assign_quantile_cells, best_witness, di_sigma_scan, dirichlet_quality_via_lattice,
    max_entropy_bound, phi_embed, phi_embed_dyadic, refined_entropy_rate, shannon_entropy,
    single_orbit_statistics, DetRng, DiscreteDistribution, EmpiricalDistribution, FlowElement,
    NormKind, TargetMatrix, TestFunction,
};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive};
use serde::Serialize;

use crate::config::{
    DirichletScanParams, EntropyDiagnosticParams, EquidistParams, EscapeParams, Expectation,
    ExperimentConfig, KindParams, MeasureAuditParams, OrbitParams, OutputFormat, TargetSpec,
};

/// Seed salt separating the Haar oracle's streams from the orbit
/// ensemble's streams (both index streams from zero).
pub const HAAR_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
/// Seed salt separating entropy-rate orbit streams from conjugation
/// oracle streams.
pub const RATE_SEED_SALT: u64 = 0x2545_f491_4f6c_dd1d;

/// One rectangular output table.
#[derive(Debug, Clone)]
pub struct DataTable {
    pub name: &'static str,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl DataTable {
    fn new(name: &'static str, headers: &[&str]) -> Self {
        DataTable {
            name,
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len(), "ragged row in {}", self.name);
        self.rows.push(row);
    }
}

/// Verdict of one named invariant of the run.
#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        CheckOutcome {
            name,
            passed,
            detail,
        }
    }
}

/// Run summary written next to the data files (always JSON).
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub experiment: String,
    pub code_version: String,
    pub seed: u64,
    pub threads: usize,
    pub format: String,
    pub wall_time_seconds: f64,
    pub config: BTreeMap<String, String>,
    pub checks: Vec<CheckOutcome>,
    pub data_files: Vec<String>,
    pub all_passed: bool,
    pub error: Option<String>,
}

/// Everything `main` needs after a run: the manifest (already written)
/// and where it landed.
#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub manifest_path: PathBuf,
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn fmt_bool(v: bool) -> String {
    v.to_string()
}

fn fmt_ratio(v: &BigRational) -> String {
    format!("{v}")
}

fn ratio_approx(v: &BigRational) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

/// Executes a resolved experiment and writes its outputs under
/// `cfg.out_dir`. IO failures are the only hard errors; experiment-level
/// failures are captured in the manifest.
pub fn run(cfg: &ExperimentConfig, params: &KindParams) -> std::io::Result<RunOutcome> {
    let started = Instant::now();
    let mut tables = Vec::new();
    let mut checks = Vec::new();
    let error = dispatch(cfg.seed, params, &mut tables, &mut checks)
        .err()
        .map(|e| e.to_string());

    fs::create_dir_all(&cfg.out_dir)?;
    let mut data_files = Vec::new();
    for table in &tables {
        data_files.push(write_table(cfg, table)?);
    }

    let all_passed = error.is_none() && checks.iter().all(|c| c.passed);
    let mut config_echo = cfg.settings().clone();
    config_echo.insert("experiment".into(), cfg.kind.name().into());
    config_echo.insert("seed".into(), cfg.seed.to_string());
    config_echo.insert("threads".into(), cfg.threads.to_string());
    config_echo.insert("format".into(), cfg.format.name().into());
    config_echo.insert("out".into(), cfg.out_dir.display().to_string());

    let manifest = RunManifest {
        experiment: cfg.kind.name().into(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        threads: cfg.threads,
        format: cfg.format.name().into(),
        wall_time_seconds: started.elapsed().as_secs_f64(),
        config: config_echo,
        checks,
        data_files,
        all_passed,
        error,
    };
    let manifest_path = cfg
        .out_dir
        .join(format!("{}-manifest.json", cfg.kind.name()));
    let mut file = fs::File::create(&manifest_path)?;
    serde_json::to_writer_pretty(&mut file, &manifest)?;
    writeln!(file)?;
    Ok(RunOutcome {
        manifest,
        manifest_path,
    })
}

fn write_table(cfg: &ExperimentConfig, table: &DataTable) -> std::io::Result<String> {
    let (file_name, path) = match cfg.format {
        OutputFormat::Csv => {
            let name = format!("{}.csv", table.name);
            (name.clone(), cfg.out_dir.join(name))
        }
        OutputFormat::Json => {
            let name = format!("{}.json", table.name);
            (name.clone(), cfg.out_dir.join(name))
        }
    };
    match cfg.format {
        OutputFormat::Csv => {
            let mut writer = csv::Writer::from_path(&path)?;
            writer.write_record(&table.headers)?;
            for row in &table.rows {
                writer.write_record(row)?;
            }
            writer.flush()?;
        }
        OutputFormat::Json => {
            let rows: Vec<serde_json::Value> = table
                .rows
                .iter()
                .map(|row| {
                    table
                        .headers
                        .iter()
                        .zip(row)
                        .map(|(h, v)| (h.clone(), serde_json::Value::String(v.clone())))
                        .collect::<serde_json::Map<_, _>>()
                        .into()
                })
                .collect();
            let mut file = fs::File::create(&path)?;
            serde_json::to_writer_pretty(&mut file, &rows)?;
            writeln!(file)?;
        }
    }
    Ok(file_name)
}

fn dispatch(
    seed: u64,
    params: &KindParams,
    tables: &mut Vec<DataTable>,
    checks: &mut Vec<CheckOutcome>,
) -> approxdyn::Result<()> {
    match params {
        KindParams::MeasureAudit(p) => run_measure_audit(seed, p, tables, checks),
        KindParams::DirichletScan(p) => run_dirichlet_scan(seed, p, tables, checks),
        KindParams::Orbit(p) => run_orbit(seed, p, tables, checks),
        KindParams::Escape(p) => run_escape(seed, p, tables, checks),
        KindParams::Equidist(p) => run_equidist(seed, p, tables, checks),
        KindParams::CoveringCheck(p) => run_covering_check(seed, p, tables, checks),
        KindParams::EntropyDiagnostic(p) => run_entropy_diagnostic(seed, p, tables, checks),
    }
}

fn run_measure_audit(
    seed: u64,
    p: &MeasureAuditParams,
    tables: &mut Vec<DataTable>,
    checks: &mut Vec<CheckOutcome>,
) -> approxdyn::Result<()> {
    // Stage-by-stage retained mass, with the exact inequality
    // retained(n)^2 <= 1/(n+1) asserted as rationals.
    let mut stages = DataTable::new(
        "stages",
        &["stage", "retained_measure", "retained_measure_float", "squared_bound_holds"],
    );
    let mut bound_failures = 0usize;
    for n in 1..=p.stages {
        let retained = remaining_set_measure(n);
        let bound = BigRational::new(One::one(), (n as u64 + 1).into());
        let holds = &retained * &retained <= bound;
        if !holds {
            bound_failures += 1;
        }
        stages.push(vec![
            n.to_string(),
            fmt_ratio(&retained),
            fmt_f64(ratio_approx(&retained)),
            fmt_bool(holds),
        ]);
    }
    tables.push(stages);
    checks.push(CheckOutcome::new(
        "stage-mass-inequality",
        bound_failures == 0,
        format!(
            "retained(n)^2 <= 1/(n+1) exactly for n = 1..={}: {bound_failures} failures",
            p.stages
        ),
    ));

    if let Some(digits) = &p.code {
        let mut code_table = DataTable::new(
            "code_masses",
            &["stage", "digits", "interval_lo", "interval_hi", "mass"],
        );
        for len in 1..=digits.len() {
            let code = IntervalCode::new(digits[..len].to_vec())?;
            let interval = interval_of_code(&code);
            let mass = mass_of_code(&code);
            code_table.push(vec![
                len.to_string(),
                digits[..len]
                    .iter()
                    .map(u32::to_string)
                    .collect::<Vec<_>>()
                    .join(" "),
                fmt_ratio(&interval.lo),
                fmt_ratio(&interval.hi),
                fmt_ratio(&mass),
            ]);
        }
        tables.push(code_table);
    }

    // Local dimension at a measure-generic point.
    let local_measure = ProductMeasure::Fractal(FractalMeasure::new(p.local_dims, p.local_depth));
    let point = match &local_measure {
        ProductMeasure::Fractal(f) => f.sample(&mut DetRng::new(seed, 0), p.local_depth),
        ProductMeasure::Lebesgue { .. } => unreachable!(),
    };
    let ratios: Vec<BigRational> = (1..=p.local_ratio_count)
        .map(|j| BigRational::new(One::one(), (1u64 << j).into()))
        .collect();
    let mut ball_table = DataTable::new(
        "local_dimension",
        &["ratio", "radius", "mass_lower", "mass_upper", "mass_midpoint"],
    );
    for delta in &ratios {
        let radius = delta * &p.local_scale;
        let bounds = local_measure.ball_mass_bounds(&point, &radius, p.local_depth);
        ball_table.push(vec![
            fmt_ratio(delta),
            fmt_ratio(&radius),
            fmt_ratio(&bounds.lower),
            fmt_ratio(&bounds.upper),
            fmt_f64(bounds.midpoint_f64()),
        ]);
    }
    tables.push(ball_table);
    let fit = estimate_local_dimension(&local_measure, &point, &p.local_scale, &ratios, p.local_depth)?;
    let mut fit_table = DataTable::new(
        "local_dimension_fit",
        &["exponent", "intercept", "residual", "depth", "band_lo", "band_hi"],
    );
    fit_table.push(vec![
        fmt_f64(fit.exponent),
        fmt_f64(fit.intercept),
        fmt_f64(fit.residual),
        p.local_depth.to_string(),
        fmt_f64(p.band_lo),
        fmt_f64(p.band_hi),
    ]);
    tables.push(fit_table);
    checks.push(CheckOutcome::new(
        "local-dimension-band",
        fit.exponent >= p.band_lo && fit.exponent <= p.band_hi,
        format!(
            "fitted exponent {} against band [{}, {}]",
            fit.exponent, p.band_lo, p.band_hi
        ),
    ));

    // Doubling-type minimum over a (points x pairs) grid.
    let product = ProductMeasure::Fractal(FractalMeasure::new(p.dims, p.federer_depth));
    let points: Vec<Vec<BigRational>> = (0..p.federer_points)
        .map(|i| match &product {
            ProductMeasure::Fractal(f) => f.sample(&mut DetRng::new(seed, 1 + i as u64), p.federer_depth),
            ProductMeasure::Lebesgue { .. } => unreachable!(),
        })
        .collect();
    let pairs: Vec<(BigRational, BigRational)> = (1..=p.federer_pairs)
        .map(|j| {
            let s = p.local_scale.clone();
            let delta = &s / BigRational::from_integer((1u64 << j).into());
            (delta, s)
        })
        .collect();
    let min_ratio = federer_ratio_scan(&product, &points, &pairs, p.federer_beta, p.federer_depth)?;
    let mut federer_table = DataTable::new(
        "federer",
        &["beta", "min_ratio", "points", "pairs", "depth"],
    );
    federer_table.push(vec![
        fmt_f64(p.federer_beta),
        fmt_f64(min_ratio),
        p.federer_points.to_string(),
        p.federer_pairs.to_string(),
        p.federer_depth.to_string(),
    ]);
    tables.push(federer_table);
    checks.push(CheckOutcome::new(
        "doubling-minimum-positive",
        min_ratio > 0.0,
        format!(
            "minimum doubling ratio {} at beta = {} over {} grid evaluations",
            min_ratio,
            p.federer_beta,
            p.federer_points * p.federer_pairs
        ),
    ));

    // Mass decay near a coordinate hyperplane through a generic point.
    let decay_center = match &product {
        ProductMeasure::Fractal(f) => f.sample(&mut DetRng::new(seed, 10_000), p.decay_depth),
        ProductMeasure::Lebesgue { .. } => unreachable!(),
    };
    let mut normal = vec![0.0; p.dims];
    normal[0] = 1.0;
    let offset = ratio_approx(&decay_center[0]);
    let plane = Hyperplane::new(normal, offset).expect("unit coordinate normal");
    let mut decay_table = DataTable::new(
        "decay",
        &["eps", "ratio_lower", "ratio_upper", "ratio_midpoint"],
    );
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &eps in &p.decay_eps_list {
        let bounds = absolute_decay_scan(
            &product,
            &decay_center,
            p.decay_radius,
            &plane,
            eps,
            p.decay_depth,
        )?;
        let mid = 0.5 * (bounds.lower + bounds.upper);
        decay_table.push(vec![
            fmt_f64(eps),
            fmt_f64(bounds.lower),
            fmt_f64(bounds.upper),
            fmt_f64(mid),
        ]);
        if mid > 0.0 {
            xs.push(eps);
            ys.push(mid);
        }
    }
    tables.push(decay_table);
    let fit = decay_exponent_fit(&xs, &ys)?;
    let mut decay_fit = DataTable::new("decay_fit", &["exponent", "intercept", "residual"]);
    decay_fit.push(vec![
        fmt_f64(fit.exponent),
        fmt_f64(fit.intercept),
        fmt_f64(fit.residual),
    ]);
    tables.push(decay_fit);
    checks.push(CheckOutcome::new(
        "decay-exponent-positive",
        fit.exponent > 0.0,
        format!("slab-mass decay exponent {}", fit.exponent),
    ));
    Ok(())
}

/// Materializes the scan targets: index, matrix, and echo of the entries.
fn scan_targets(p: &DirichletScanParams, seed: u64) -> Vec<(usize, TargetMatrix, Vec<String>)> {
    match &p.target {
        TargetSpec::Explicit(t) => {
            let echo = match t {
                TargetMatrix::F64 { entries, .. } => entries.iter().map(|v| fmt_f64(*v)).collect(),
                TargetMatrix::Rational { entries, .. } => entries.iter().map(fmt_ratio).collect(),
            };
            vec![(0, t.clone(), echo)]
        }
        TargetSpec::Lebesgue => (0..p.samples)
            .map(|s| {
                let mut rng = DetRng::new(seed, s as u64);
                let entries: Vec<f64> = (0..p.m * p.n).map(|_| rng.next_f64()).collect();
                let echo = entries.iter().map(|v| fmt_f64(*v)).collect();
                (s, TargetMatrix::new_f64(p.m, p.n, entries), echo)
            })
            .collect(),
        TargetSpec::Fractal => {
            let measure = FractalMeasure::new(p.m * p.n, 64);
            (0..p.samples)
                .map(|s| {
                    let mut rng = DetRng::new(seed, s as u64);
                    let entries = measure.sample_dyadic(&mut rng, p.target_bits).to_f64_coords();
                    let echo = entries.iter().map(|v| fmt_f64(*v)).collect();
                    (s, TargetMatrix::new_f64(p.m, p.n, entries), echo)
                })
                .collect(),
        }
    }
}

fn run_dirichlet_scan(
    seed: u64,
    p: &DirichletScanParams,
    tables: &mut Vec<DataTable>,
    checks: &mut Vec<CheckOutcome>,
) -> approxdyn::Result<()> {
    let targets = scan_targets(p, seed);

    let mut headers: Vec<String> = vec!["sample".into(), "big_n".into(), "sigma_star".into()];
    headers.extend((1..=p.m).map(|i| format!("q{i}")));
    headers.extend((1..=p.n).map(|j| format!("p{j}")));
    headers.extend(["residual".into(), "height".into(), "holds".into()]);
    if p.cross_check_lattice {
        headers.extend(["lambda1_sup".into(), "route_difference".into()]);
    }
    let mut scan = DataTable {
        name: "scan",
        headers,
        rows: Vec::new(),
    };
    let mut summary_headers: Vec<String> = vec!["sample".into()];
    summary_headers.extend((1..=p.m * p.n).map(|i| format!("y{i}")));
    summary_headers.extend([
        "failing_count".into(),
        "largest_failing".into(),
        "consistent_on_range".into(),
        "has_failing_from_threshold".into(),
    ]);
    let mut summary = DataTable {
        name: "scan_summary",
        headers: summary_headers,
        rows: Vec::new(),
    };

    let mut bound_violations = 0usize;
    let mut worst_route_diff = 0.0f64;
    let mut samples_with_late_failure = 0usize;
    let mut all_hold = true;

    // Flush partial rows if a mid-scan error escapes (budget or
    // enumeration overruns surface as `Err` from the core calls).
    let result = (|| -> approxdyn::Result<()> {
        for (sample, target, echo) in &targets {
            for big_n in p.big_n_min..=p.big_n_max {
                let report = best_witness(target, big_n)?;
                let holds = report.satisfies(p.sigma);
                let le_one = match &report.sigma_star_exact {
                    Some(exact) => *exact <= BigRational::one(),
                    None => report.sigma_star <= 1.0 + 1e-9,
                };
                if !le_one {
                    bound_violations += 1;
                }
                let mut row = vec![
                    sample.to_string(),
                    big_n.to_string(),
                    fmt_f64(report.sigma_star),
                ];
                row.extend(report.witness.q.iter().map(i64::to_string));
                row.extend(report.witness.p.iter().map(i64::to_string));
                row.push(fmt_f64(report.witness.residual));
                row.push(fmt_f64(report.witness.height));
                row.push(fmt_bool(holds));
                if p.cross_check_lattice {
                    let lambda1 = dirichlet_quality_via_lattice(target, big_n)?;
                    let diff = (lambda1 - report.sigma_star).abs();
                    worst_route_diff = worst_route_diff.max(diff);
                    row.push(fmt_f64(lambda1));
                    row.push(fmt_f64(diff));
                }
                scan.push(row);
            }

            let verdict = di_sigma_scan(target, p.sigma, p.big_n_min, p.big_n_max)?;
            if !verdict.failing.is_empty() {
                all_hold = false;
            }
            let late = verdict
                .failing
                .iter()
                .any(|&n| n >= p.expect_failing_from);
            if late {
                samples_with_late_failure += 1;
            }
            let mut row = vec![sample.to_string()];
            row.extend(echo.iter().cloned());
            row.push(verdict.failing.len().to_string());
            row.push(
                verdict
                    .largest_failing
                    .map(|n| n.to_string())
                    .unwrap_or_default(),
            );
            row.push(fmt_bool(verdict.consistent_on_range));
            row.push(fmt_bool(late));
            summary.push(row);
        }
        Ok(())
    })();

    tables.push(scan);
    tables.push(summary);
    result?;

    checks.push(CheckOutcome::new(
        "quality-at-most-one",
        bound_violations == 0,
        format!(
            "sigma_star <= 1 across {} rows: {bound_violations} violations",
            targets.len() as u64 * (p.big_n_max - p.big_n_min + 1)
        ),
    ));
    if p.cross_check_lattice {
        checks.push(CheckOutcome::new(
            "route-agreement",
            worst_route_diff <= p.route_tol,
            format!(
                "max |lattice - direct| = {worst_route_diff:e} against tolerance {:e}",
                p.route_tol
            ),
        ));
    }
    match p.expect {
        Expectation::None => {}
        Expectation::Holds => checks.push(CheckOutcome::new(
            "expected-all-hold",
            all_hold,
            format!("every sample passed on N in [{}, {}]", p.big_n_min, p.big_n_max),
        )),
        Expectation::Fails => {
            let fraction = samples_with_late_failure as f64 / targets.len() as f64;
            checks.push(CheckOutcome::new(
                "expected-failures",
                fraction >= p.expect_fraction,
                format!(
                    "{samples_with_late_failure}/{} samples fail at some N >= {} \
                     (fraction {fraction} against {})",
                    targets.len(),
                    p.expect_failing_from,
                    p.expect_fraction
                ),
            ));
        }
    }
    Ok(())
}

fn run_orbit(
    seed: u64,
    p: &OrbitParams,
    tables: &mut Vec<DataTable>,
    checks: &mut Vec<CheckOutcome>,
) -> approxdyn::Result<()> {
    let start = match &p.start {
        TargetSpec::Explicit(t) => phi_embed(t),
        spec => {
            let dims = p.flow.target_rows() * p.flow.target_cols();
            let measure = match spec {
                TargetSpec::Lebesgue => ProductMeasure::Lebesgue {
                    dimension_count: dims,
                },
                _ => ProductMeasure::Fractal(FractalMeasure::new(dims, 64)),
            };
            let mut rng = DetRng::new(seed, 0);
            if p.start_bits > 0 {
                let point = measure.sample_dyadic(&mut rng, p.start_bits);
                phi_embed_dyadic(&point, p.flow.target_rows(), p.flow.target_cols())
            } else {
                sample_start_basis(&measure, &p.flow, p.k, &mut rng)
            }
        }
    };
    let stats = single_orbit_statistics(&start, &p.flow, p.k, &p.eps_grid, &p.sigma_grid)?;

    let mut headers: Vec<String> = vec!["step".into(), "lambda1_sup".into(), "lambda1_euc".into()];
    headers.extend(p.eps_grid.iter().map(|e| format!("in_f_eps_{e}")));
    headers.extend(p.sigma_grid.iter().map(|s| format!("in_k_sigma_{s}")));
    let mut table = DataTable {
        name: "orbit",
        headers,
        rows: Vec::new(),
    };
    let eps_flags: Vec<Vec<bool>> = p.eps_grid.iter().map(|&e| stats.f_eps_flags(e)).collect();
    let sigma_flags: Vec<Vec<bool>> = p
        .sigma_grid
        .iter()
        .map(|&s| stats.k_sigma_flags(s))
        .collect();
    for l in 0..stats.k {
        let mut row = vec![
            l.to_string(),
            fmt_f64(stats.lambda1_sup[l]),
            fmt_f64(stats.lambda1_euc[l]),
        ];
        row.extend(eps_flags.iter().map(|flags| fmt_bool(flags[l])));
        row.extend(sigma_flags.iter().map(|flags| fmt_bool(flags[l])));
        table.push(row);
    }
    tables.push(table);

    let max_sup = stats.lambda1_sup.iter().copied().fold(0.0, f64::max);
    let min_sup = stats.lambda1_sup.iter().copied().fold(f64::INFINITY, f64::min);
    checks.push(CheckOutcome::new(
        "sup-norm-at-most-one",
        max_sup <= 1.0 + 1e-9,
        format!("max lambda1_sup along the orbit = {max_sup}"),
    ));
    checks.push(CheckOutcome::new(
        "lengths-positive",
        min_sup > 0.0,
        format!("min lambda1_sup along the orbit = {min_sup}"),
    ));
    Ok(())
}

fn run_escape(
    seed: u64,
    p: &EscapeParams,
    tables: &mut Vec<DataTable>,
    checks: &mut Vec<CheckOutcome>,
) -> approxdyn::Result<()> {
    let report = approxdyn::escape_fraction(&p.measure, &p.flow, &p.eps_grid, p.k, p.samples, seed)?;

    let mut table = DataTable::new("escape", &["eps", "fraction"]);
    let mut sorted = report.entries.clone();
    sorted.sort_by(|a, b| a.eps.total_cmp(&b.eps));
    for entry in &sorted {
        table.push(vec![fmt_f64(entry.eps), fmt_f64(entry.fraction)]);
    }
    tables.push(table);

    let monotone = sorted.windows(2).all(|w| w[0].fraction <= w[1].fraction);
    checks.push(CheckOutcome::new(
        "fraction-monotone-in-eps",
        monotone,
        "escape fraction must not grow as eps shrinks".into(),
    ));
    let smallest = &sorted[0];
    checks.push(CheckOutcome::new(
        "small-eps-fraction",
        smallest.fraction <= p.max_small_eps_fraction,
        format!(
            "fraction {} at eps = {} against cap {}",
            smallest.fraction, smallest.eps, p.max_small_eps_fraction
        ),
    ));
    match &report.fit {
        Some(fit) => {
            let mut fit_table =
                DataTable::new("escape_fit", &["exponent", "intercept", "residual"]);
            fit_table.push(vec![
                fmt_f64(fit.exponent),
                fmt_f64(fit.intercept),
                fmt_f64(fit.residual),
            ]);
            tables.push(fit_table);
            checks.push(CheckOutcome::new(
                "escape-exponent-positive",
                fit.exponent > 0.0,
                format!("fitted exponent {}", fit.exponent),
            ));
        }
        None => checks.push(CheckOutcome::new(
            "escape-exponent-positive",
            true,
            "no fit: fewer than 3 grid points with positive fraction".into(),
        )),
    }
    Ok(())
}

fn run_equidist(
    seed: u64,
    p: &EquidistParams,
    tables: &mut Vec<DataTable>,
    checks: &mut Vec<CheckOutcome>,
) -> approxdyn::Result<()> {
    let value_cap = match p.test_function {
        TestFunction::Lambda1Sup => 1.0,
        TestFunction::Lambda1Euc => (p.flow.dimension() as f64).sqrt(),
        _ => 1.0,
    } + 1e-9;

    if p.pooled {
        let values =
            approxdyn::pooled_orbit_values(&p.measure, &p.flow, &p.test_function, p.k, p.samples, seed)?;
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let mut quantiles = DataTable::new("pooled_quantiles", &["percentile", "value"]);
        for q in 0..=100usize {
            let idx = (q * (sorted.len() - 1)) / 100;
            quantiles.push(vec![q.to_string(), fmt_f64(sorted[idx])]);
        }
        tables.push(quantiles);

        let max_seen = *sorted.last().expect("nonempty");
        checks.push(CheckOutcome::new(
            "values-within-range",
            max_seen <= value_cap,
            format!("max pooled value {max_seen} against cap {value_cap}"),
        ));

        if p.haar_count > 0 {
            let norm = match p.test_function {
                TestFunction::Lambda1Euc => NormKind::Euclidean,
                _ => NormKind::Sup,
            };
            let haar = approxdyn::haar_lambda1_sample(p.haar_count, seed ^ HAAR_SEED_SALT, norm);
            let ks = ks_distance(
                &EmpiricalDistribution::new(values)?,
                &EmpiricalDistribution::new(haar)?,
            );
            let mut ks_table = DataTable::new(
                "ks",
                &["ks_statistic", "threshold", "pooled_count", "haar_count"],
            );
            ks_table.push(vec![
                fmt_f64(ks),
                fmt_f64(p.ks_threshold),
                (p.k * p.samples).to_string(),
                p.haar_count.to_string(),
            ]);
            tables.push(ks_table);
            checks.push(CheckOutcome::new(
                "ks-within-threshold",
                ks <= p.ks_threshold,
                format!("KS distance {ks} against threshold {}", p.ks_threshold),
            ));
        }
    } else {
        let trace =
            approxdyn::cesaro_statistic(&p.measure, &p.flow, &p.test_function, p.k, p.samples, seed)?;
        let mut table = DataTable::new("cesaro", &["step", "partial_average"]);
        for (l, avg) in trace.partial_averages.iter().enumerate() {
            table.push(vec![l.to_string(), fmt_f64(*avg)]);
        }
        tables.push(table);
        let max_avg = trace
            .partial_averages
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let min_avg = trace.partial_averages.iter().copied().fold(f64::INFINITY, f64::min);
        checks.push(CheckOutcome::new(
            "averages-within-range",
            max_avg <= value_cap && min_avg >= -1e-12,
            format!("partial averages span [{min_avg}, {max_avg}] against cap {value_cap}"),
        ));
    }
    Ok(())
}

fn run_covering_check(
    seed: u64,
    p: &crate::config::CoveringCheckParams,
    tables: &mut Vec<DataTable>,
    checks: &mut Vec<CheckOutcome>,
) -> approxdyn::Result<()> {
    let mut tube = DataTable::new(
        "tube_covers",
        &["i", "j", "t", "eps", "actual_count", "bound", "bound_holds"],
    );
    let mut tube_violations = 0u64;
    for i in 1..=p.i_max {
        for j in 1..=p.j_max {
            for &t in &p.t_list {
                for &eps in &p.eps_list {
                    let report = tube_cover_bound_check(i, j, t, eps, p.s);
                    if !report.bound_holds {
                        tube_violations += 1;
                    }
                    tube.push(vec![
                        i.to_string(),
                        j.to_string(),
                        fmt_f64(t),
                        fmt_f64(eps),
                        report.actual_count.to_string(),
                        fmt_f64(report.bound),
                        fmt_bool(report.bound_holds),
                    ]);
                }
            }
        }
    }
    let tube_rows = tube.rows.len();
    tables.push(tube);
    checks.push(CheckOutcome::new(
        "tube-bounds",
        tube_violations == 0,
        format!("{tube_violations} violations across {tube_rows} covers"),
    ));

    let mut plane = DataTable::new(
        "plane_covers",
        &["config", "radius", "eps", "center_distance", "actual_count", "bound", "bound_holds", "probe_misses"],
    );
    let mut plane_violations = 0u64;
    let mut probe_misses = 0u64;
    for idx in 0..p.plane_configs {
        let mut rng = DetRng::new(seed, idx as u64);
        let center: Vec<f64> = (0..p.plane_dim).map(|_| rng.next_f64()).collect();
        let r = 0.05 + 0.45 * rng.next_f64();
        let eps = r * (0.002 + 0.2 * rng.next_f64());
        let normal = loop {
            let candidate: Vec<f64> = (0..p.plane_dim).map(|_| 2.0 * rng.next_f64() - 1.0).collect();
            if candidate.iter().map(|c| c * c).sum::<f64>() > 1e-6 {
                break candidate;
            }
        };
        let through: f64 = normal.iter().zip(&center).map(|(u, c)| u * c).sum();
        let plane_def = Hyperplane::new(normal, through + (2.0 * rng.next_f64() - 1.0) * r)
            .expect("nonzero normal");
        let report = hyperplane_cover_check(p.plane_dim, &center, r, &plane_def, eps, p.probes, &mut rng);
        if !report.bound_holds {
            plane_violations += 1;
        }
        probe_misses += report.probe_misses;
        plane.push(vec![
            idx.to_string(),
            fmt_f64(r),
            fmt_f64(eps),
            fmt_f64(plane_def.signed_distance(&center).abs()),
            report.actual_count.to_string(),
            fmt_f64(report.bound),
            fmt_bool(report.bound_holds),
            report.probe_misses.to_string(),
        ]);
    }
    tables.push(plane);
    checks.push(CheckOutcome::new(
        "slab-cover-bounds",
        plane_violations == 0,
        format!("{plane_violations} budget violations across {} covers", p.plane_configs),
    ));
    checks.push(CheckOutcome::new(
        "slab-cover-probes",
        probe_misses == 0,
        format!("{probe_misses} uncovered probe points across {} covers", p.plane_configs),
    ));
    Ok(())
}

/// Maximal entrywise difference between `a_N φ(Y) a_N^{-1}` and
/// `φ(N^{m+n} Y)`, all products evaluated densely in `f64`. The identity
/// pins the expansion rate the entropy bound integrates.
pub fn conjugation_residual(m: usize, n: usize, big_n: u32, entries: &[f64]) -> f64 {
    assert_eq!(entries.len(), m * n, "need m*n entries");
    let d = m + n;
    let base = big_n as f64;
    let mut phi = identity(d);
    for i in 0..m {
        for j in 0..n {
            phi[(n + i) * d + j] = entries[i * n + j];
        }
    }
    let mut a = vec![0.0; d * d];
    let mut a_inv = vec![0.0; d * d];
    for j in 0..n {
        a[j * d + j] = base.powi(-(m as i32));
        a_inv[j * d + j] = base.powi(m as i32);
    }
    for j in n..d {
        a[j * d + j] = base.powi(n as i32);
        a_inv[j * d + j] = base.powi(-(n as i32));
    }
    let conjugated = mat_mul(&mat_mul(&a, &phi, d), &a_inv, d);
    let scale = base.powi((m + n) as i32);
    let mut expected = identity(d);
    for i in 0..m {
        for j in 0..n {
            expected[(n + i) * d + j] = scale * entries[i * n + j];
        }
    }
    conjugated
        .iter()
        .zip(&expected)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

fn mat_mul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..d {
                out[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    out
}

fn run_entropy_diagnostic(
    seed: u64,
    p: &EntropyDiagnosticParams,
    tables: &mut Vec<DataTable>,
    checks: &mut Vec<CheckOutcome>,
) -> approxdyn::Result<()> {
    // Uniform distributions: entropy must reproduce log(cells) to float
    // precision.
    let mut uniform = DataTable::new(
        "uniform_entropy",
        &["cells", "entropy", "log_cells", "abs_error"],
    );
    let mut worst_rel = 0.0f64;
    for cells in 2..=p.cells_max {
        let dist = DiscreteDistribution::new(vec![1.0 / cells as f64; cells])?;
        let h = shannon_entropy(&dist);
        let expected = (cells as f64).ln();
        let err = (h - expected).abs();
        worst_rel = worst_rel.max(err / expected);
        uniform.push(vec![
            cells.to_string(),
            fmt_f64(h),
            fmt_f64(expected),
            fmt_f64(err),
        ]);
    }
    tables.push(uniform);
    let rel_cap = 4.0 * f64::EPSILON;
    checks.push(CheckOutcome::new(
        "uniform-entropy-exact",
        worst_rel <= rel_cap,
        format!("worst relative error {worst_rel:e} against {rel_cap:e}"),
    ));

    // Closed-form maximal entropy and the conjugation identity that
    // justifies its expansion rate.
    let flow = FlowElement::new_split(p.m, p.n, p.big_n);
    let bound = max_entropy_bound(&flow)?;
    let closed_form = (p.m * p.n * (p.m + p.n)) as f64 * (p.big_n as f64).ln();
    let mut bound_table = DataTable::new(
        "entropy_bound",
        &["m", "n", "big_n", "bound", "closed_form"],
    );
    bound_table.push(vec![
        p.m.to_string(),
        p.n.to_string(),
        p.big_n.to_string(),
        fmt_f64(bound),
        fmt_f64(closed_form),
    ]);
    tables.push(bound_table);
    checks.push(CheckOutcome::new(
        "entropy-bound-closed-form",
        bound == closed_form,
        format!("bound {bound} against closed form {closed_form}"),
    ));

    let mut max_residual = 0.0f64;
    for trial in 0..p.oracle_trials {
        let mut rng = DetRng::new(seed, trial as u64);
        let entries: Vec<f64> = (0..p.m * p.n).map(|_| rng.next_f64()).collect();
        max_residual = max_residual.max(conjugation_residual(p.m, p.n, p.big_n, &entries));
    }
    let mut oracle_table = DataTable::new(
        "conjugation",
        &["trials", "max_residual", "tolerance"],
    );
    oracle_table.push(vec![
        p.oracle_trials.to_string(),
        fmt_f64(max_residual),
        fmt_f64(p.oracle_tol),
    ]);
    tables.push(oracle_table);
    checks.push(CheckOutcome::new(
        "conjugation-oracle",
        max_residual <= p.oracle_tol,
        format!(
            "max residual {max_residual:e} over {} trials against {:e}",
            p.oracle_trials, p.oracle_tol
        ),
    ));

    // Empirical block-entropy rate of quantile-coded orbit lengths.
    let rate_seed = seed ^ RATE_SEED_SALT;
    let mut all_values = Vec::with_capacity(p.samples * p.k);
    let result = (0..p.samples).try_for_each(|s| -> approxdyn::Result<()> {
        let mut rng = DetRng::new(rate_seed, s as u64);
        let start = sample_start_basis(&p.measure, &flow, p.k, &mut rng);
        let stats = single_orbit_statistics(&start, &flow, p.k, &[], &[])?;
        all_values.extend(stats.lambda1_sup);
        Ok(())
    });
    result?;
    let cells = assign_quantile_cells(&all_values, p.cell_count);
    let sequences: Vec<Vec<usize>> = cells.chunks(p.k).map(<[usize]>::to_vec).collect();
    let mut rate_table = DataTable::new(
        "entropy_rate",
        &["rate", "distinct_blocks", "block_count", "cells", "block_len", "rate_cap"],
    );
    let rate_cap = (p.cell_count as f64).ln();
    match refined_entropy_rate(&sequences, p.cell_count, p.block_len) {
        Ok(report) => {
            rate_table.push(vec![
                fmt_f64(report.rate),
                report.distinct_blocks.to_string(),
                report.block_count.to_string(),
                p.cell_count.to_string(),
                p.block_len.to_string(),
                fmt_f64(rate_cap),
            ]);
            tables.push(rate_table);
            checks.push(CheckOutcome::new(
                "entropy-rate-within-cap",
                report.rate >= 0.0 && report.rate <= rate_cap + 1e-9,
                format!("block entropy rate {} against cap {rate_cap}", report.rate),
            ));
        }
        Err(e) => {
            tables.push(rate_table);
            checks.push(CheckOutcome::new(
                "entropy-rate-within-cap",
                false,
                format!("rate not evaluable: {e}"),
            ));
        }
    }
    Ok(())
}
