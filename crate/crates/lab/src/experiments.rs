//! Experiment pipelines.
//!
//! Every pipeline maps a grid of parameter values times a number of
//! replicas to independent jobs, persists per-replica rows through a
//! [`RunStore`], and condenses them into a [`RunRecord`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use brownot_core::brownian::{occupation_atoms_streaming, uniform_torus_point};
use brownot_core::geometry::{restrict_measure, uniform_discretization};
use brownot_core::interlacement::{
    sample_fixed_n, sample_interlacement, sample_with_count, sampling_ball, InterlacementSample, PathConfig,
};
use brownot_core::potential::{capacity_ball, iterated_hit_frequencies, torus_hit_once, torus_hitting_summary, TorusHitTrial};
use brownot_core::stats::{spearman, weighted_linear_regression, RunningStats};
use brownot_core::transport::{wasserstein_exact_with, wasserstein_to_uniform, SolverChoice, TransportProblem};
use brownot_core::{Domain, SeedSpec, Space, WeightedAtoms};

use crate::config::{ExperimentConfig, ExperimentKind, Extrapolation};
use crate::error::{LabError, LabResult};
use crate::io::{save_atoms, save_plan};
use crate::record::{Check, ConstantEstimate, ExtrapolationTag, FitResult, GridPoint, RunRecord, Timing};
use crate::runner::{aux_series, by_grid, Completed, Job, ReplicaResult, RunStore};

/// Where and how to run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Run directory; `None` keeps everything in memory.
    pub out: Option<PathBuf>,
    pub jobs: usize,
}

impl RunOptions {
    pub fn in_memory() -> Self {
        RunOptions { out: None, jobs: 1 }
    }

    pub fn in_dir(dir: impl Into<PathBuf>, jobs: usize) -> Self {
        RunOptions {
            out: Some(dir.into()),
            jobs,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: RunRecord,
    pub replicas: Vec<Completed>,
}

struct Session {
    store: RunStore,
    started: Instant,
    started_unix: u64,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn open_session(kind: ExperimentKind, config: &ExperimentConfig, opts: &RunOptions, grid: &[f64]) -> LabResult<Session> {
    let store = match &opts.out {
        Some(dir) => RunStore::open(dir, kind, config, grid)?,
        None => RunStore::ephemeral(),
    };
    Ok(Session {
        store,
        started: Instant::now(),
        started_unix: unix_now(),
    })
}

struct RecordParts {
    grid_label: &'static str,
    grid: Vec<GridPoint>,
    fit: Option<FitResult>,
    constant: Option<ConstantEstimate>,
    checks: Vec<Check>,
    summary: BTreeMap<String, f64>,
}

fn close_session(kind: ExperimentKind, config: &ExperimentConfig, session: Session, parts: RecordParts) -> LabResult<RunRecord> {
    let record = RunRecord {
        experiment: kind,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        grid_label: parts.grid_label.to_string(),
        grid: parts.grid,
        fit: parts.fit,
        constant: parts.constant,
        checks: parts.checks,
        summary: parts.summary,
        timing: Timing {
            started_unix: session.started_unix,
            finished_unix: unix_now(),
            total_wall_ms: session.started.elapsed().as_secs_f64() * 1e3,
        },
    };
    record.validate()?;
    if session.store.is_persistent() {
        record.save(&session.store.dir().join("record.json"))?;
        session.store.finish()?;
    }
    Ok(record)
}

fn check(name: &str, passed: bool, value: f64, threshold: f64, detail: impl Into<String>) -> Check {
    Check {
        name: name.to_string(),
        passed,
        value,
        threshold,
        detail: detail.into(),
    }
}

/// Mean, SE and SD of the raw and normalized costs at one grid value.
pub fn grid_point(value: f64, group: &[&Completed], normalization: f64) -> GridPoint {
    let cost: RunningStats = group.iter().map(|c| c.result.cost).collect();
    let mass: RunningStats = group.iter().map(|c| c.result.mass).collect();
    let norm: RunningStats = group.iter().map(|c| c.result.cost / normalization).collect();
    let n = cost.count();
    let sd_se = if n > 1 { norm.sd() / ((2 * (n - 1)) as f64).sqrt() } else { f64::INFINITY };
    let mut extra = BTreeMap::new();
    for (name, series) in aux_series(group) {
        let s: RunningStats = series.iter().copied().filter(|v| v.is_finite()).collect();
        if s.count() > 0 {
            extra.insert(format!("{name}_mean"), s.mean());
            if s.count() > 1 {
                extra.insert(format!("{name}_se"), s.se());
            }
        }
    }
    GridPoint {
        value,
        replicas: n,
        mean_cost: cost.mean(),
        se_cost: cost.se(),
        sd_cost: cost.sd(),
        mean_mass: mass.mean(),
        se_mass: mass.se(),
        normalized: norm.mean(),
        normalized_se: norm.se(),
        normalized_sd: norm.sd(),
        normalized_sd_se: sd_se,
        extra,
    }
}

/// Weighted log-log fit of the mean cost against the grid value.
pub fn fit_exponent(grid: &[GridPoint], expected: f64, tolerance: f64) -> LabResult<FitResult> {
    let pts: Vec<&GridPoint> = grid.iter().filter(|g| g.mean_cost > 0.0).collect();
    let x: Vec<f64> = pts.iter().map(|g| g.value.ln()).collect();
    let y: Vec<f64> = pts.iter().map(|g| g.mean_cost.ln()).collect();
    let w: Vec<f64> = pts
        .iter()
        .map(|g| {
            let rel = g.se_cost / g.mean_cost;
            if rel > 0.0 {
                1.0 / (rel * rel)
            } else {
                1.0
            }
        })
        .collect();
    let fit = weighted_linear_regression(&x, &y, Some(&w))?;
    Ok(FitResult {
        exponent: fit.slope,
        exponent_se: fit.slope_se,
        intercept: fit.intercept,
        ci95: fit.slope_ci95(),
        expected,
        tolerance,
        within_tolerance: (fit.slope - expected).abs() <= tolerance,
    })
}

/// Stride such that roughly `max_atoms` atoms carry `expected_mass`.
fn stride_for(expected_mass: f64, dt: f64, max_atoms: usize) -> usize {
    ((expected_mass / dt / max_atoms as f64).ceil() as usize).max(1)
}

/// One stride for the whole grid, sized for its largest point, so that every
/// grid value is measured with the same atom spacing.
fn shared_stride(grid: &[f64], mass_per_unit: f64, config: &ExperimentConfig) -> usize {
    let top = grid.iter().cloned().fold(0.0, f64::max);
    stride_for(top * mass_per_unit, config.dt.dt, config.max_atoms)
}

/// Merges further when a random sample overshoots the atom budget.
fn fit_budget(mu: WeightedAtoms, max_atoms: usize) -> LabResult<WeightedAtoms> {
    if mu.len() <= max_atoms {
        return Ok(mu);
    }
    let s = mu.len().div_ceil(max_atoms);
    Ok(mu.coarsened(s)?)
}

struct UniformSolve {
    cost: f64,
    grid_error_bound: f64,
}

fn cost_to_uniform(mu: &WeightedAtoms, omega: &Domain, config: &ExperimentConfig) -> LabResult<UniformSolve> {
    solve_with(mu, omega, config, &config.solver.choice())
}

fn solve_with(mu: &WeightedAtoms, omega: &Domain, config: &ExperimentConfig, choice: &SolverChoice) -> LabResult<UniformSolve> {
    let r = wasserstein_to_uniform(mu, omega, config.p, config.grid_n, choice)?;
    Ok(UniformSolve {
        cost: r.cost,
        grid_error_bound: r.grid_error_bound,
    })
}

/// Writes the atoms and the optimal plan of one sample next to the results.
fn save_example(dir: &Path, tag: &str, mu: &WeightedAtoms, omega: &Domain, config: &ExperimentConfig) -> LabResult<()> {
    save_atoms(&dir.join(format!("atoms_{tag}.csv")), mu)?;
    let restricted = restrict_measure(mu, omega)?.without_zero_mass();
    if restricted.is_empty() {
        return Ok(());
    }
    let grid = uniform_discretization(omega, config.grid_n)?.atoms;
    let target = grid.scaled(restricted.total_mass() / grid.total_mass())?;
    let problem = TransportProblem::new(restricted, target, config.p)?;
    if let SolverChoice::Exact(o) = config.solver.choice() {
        if let Ok((plan, _)) = wasserstein_exact_with(&problem, &o) {
            save_plan(&dir.join(format!("plan_{tag}.csv")), &plan, &problem)?;
        }
    }
    Ok(())
}

fn maybe_save_example(opts: &RunOptions, config: &ExperimentConfig, job: &Job, mu: &WeightedAtoms, omega: &Domain) -> LabResult<()> {
    if let (true, Some(dir), 0) = (config.save_examples, &opts.out, job.replica) {
        save_example(dir, &format!("g{}", job.grid_index), mu, omega, config)?;
    }
    Ok(())
}

fn path_config(config: &ExperimentConfig, stride: usize) -> PathConfig {
    PathConfig {
        stride,
        ..config.dt.path_config(config.r_max)
    }
}

/// Seed of the deterministic-count companion sample.
fn depoisson_seed(config: &ExperimentConfig, job: &Job) -> SeedSpec {
    SeedSpec::new(config.master_seed, 1).child(job.grid_index as u64).child(job.replica)
}

fn interlacement_atoms(sample: InterlacementSample, config: &ExperimentConfig) -> LabResult<WeightedAtoms> {
    fit_budget(sample.occupation, config.max_atoms)
}

/// `W^p_Ω(𝓘_u)` over a grid of intensities, normalized by
/// `u^{1-p/(d-2)} |Ω|`; the constant is read off the last grid point or
/// extrapolated from the last two.
pub fn run_constant_estimation(config: &ExperimentConfig, opts: &RunOptions) -> LabResult<(ConstantEstimate, RunOutput)> {
    let kind = ExperimentKind::Constant;
    config.validate_for(kind)?;
    let omega = config.domain.build(config.d)?;
    let volume = omega.volume();
    let cap_sampling = capacity_ball(config.d, sampling_ball(&omega)?.inradius())?.value;
    let grid = config.u_grid.clone();
    let stride = shared_stride(&grid, volume, config);
    let mut session = open_session(kind, config, opts, &grid)?;
    let all = session.store.run(&grid, config.replicas, opts.jobs, |job| {
        let u = job.grid_value;
        let cfg = path_config(config, stride);
        let s = sample_interlacement(&omega, u, &cfg, job.seed(config.master_seed))?;
        let (n_paths, trunc) = (s.n_paths, s.truncation.neglected_mass_bound);
        let mu = interlacement_atoms(s, config)?;
        maybe_save_example(opts, config, job, &mu, &omega)?;
        let solve = cost_to_uniform(&mu, &omega, config)?;
        let mut r = ReplicaResult::new(solve.cost, mu.total_mass())
            .with("n_paths", n_paths as f64)
            .with("grid_error_bound", solve.grid_error_bound)
            .with("truncation_bound", trunc);
        if config.depoissonize {
            let n = (u * cap_sampling).round() as u64;
            let s = sample_with_count(&omega, n, &cfg, depoisson_seed(config, job))?;
            let mu = interlacement_atoms(s, config)?;
            r = r.with("depoisson_cost", cost_to_uniform(&mu, &omega, config)?.cost);
        }
        Ok(r)
    })?;
    let rate = config.rate_exponent();
    let groups = by_grid(&all, grid.len());
    let points: Vec<GridPoint> = grid
        .iter()
        .zip(&groups)
        .map(|(&u, g)| grid_point(u, g, u.powf(rate) * volume))
        .collect();

    let mut checks = Vec::new();
    let min_norm = points.iter().map(|g| g.normalized).fold(f64::INFINITY, f64::min);
    checks.push(check("normalized_positive", min_norm > 0.0, min_norm, 0.0, "smallest normalized mean"));
    if points.len() >= 3 {
        let top = &points[points.len() - 3..];
        let vals: Vec<f64> = top.iter().map(|g| g.normalized).collect();
        let mean = vals.iter().sum::<f64>() / 3.0;
        let spread = (vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - vals.iter().cloned().fold(f64::INFINITY, f64::min)) / mean;
        checks.push(check(
            "plateau_spread",
            spread < config.tolerances.plateau_spread,
            spread,
            config.tolerances.plateau_spread,
            "relative spread of the normalized means over the top three intensities",
        ));
    }
    if config.depoissonize {
        let mut worst = 0.0f64;
        for (g, grp) in points.iter().zip(&groups) {
            let d: RunningStats = grp.iter().filter_map(|c| c.result.aux_value("depoisson_cost")).collect();
            let z = (g.mean_cost - d.mean()).abs() / (g.se_cost.powi(2) + d.se().powi(2)).sqrt().max(f64::MIN_POSITIVE);
            worst = worst.max(z);
        }
        checks.push(check(
            "depoissonized_agreement",
            worst <= 1.96 * std::f64::consts::SQRT_2,
            worst,
            1.96 * std::f64::consts::SQRT_2,
            "largest standardized gap between Poisson and fixed-count means",
        ));
    }

    let last = points.last().expect("grid is nonempty");
    let constant = match (config.extrapolation, points.len()) {
        (Extrapolation::Richardson { order }, n) if n >= 2 => {
            let (a, b) = (&points[n - 2], &points[n - 1]);
            let (wa, wb) = (a.value.powf(order), b.value.powf(order));
            let den = wb - wa;
            let value = (b.normalized * wb - a.normalized * wa) / den;
            let se = ((wb / den * b.normalized_se).powi(2) + (wa / den * a.normalized_se).powi(2)).sqrt();
            ConstantEstimate {
                value,
                se,
                ci95: (value - 1.96 * se, value + 1.96 * se),
                grid: grid.clone(),
                method: ExtrapolationTag::Richardson,
                replicas: config.replicas,
            }
        }
        _ => ConstantEstimate {
            value: last.normalized,
            se: last.normalized_se,
            ci95: (last.normalized - 1.96 * last.normalized_se, last.normalized + 1.96 * last.normalized_se),
            grid: grid.clone(),
            method: ExtrapolationTag::LastGridPoint,
            replicas: config.replicas,
        },
    };
    checks.push(check("constant_positive", constant.is_positive(), constant.value, 0.0, "estimated constant"));
    let mut summary = BTreeMap::new();
    summary.insert("stride".into(), stride as f64);
    summary.insert("volume".into(), volume);
    let record = close_session(
        kind,
        config,
        session,
        RecordParts {
            grid_label: "u",
            grid: points,
            fit: None,
            constant: Some(constant.clone()),
            checks,
            summary,
        },
    )?;
    Ok((constant, RunOutput { record, replicas: all }))
}

/// `E W^p_Ω(μ^n)` for `n` paths started from the normalized equilibrium
/// measure of `Ω`, normalized by `(n / Cap Ω)^{1-p/(d-2)} |Ω|`.
pub fn run_fixed_n_limit(config: &ExperimentConfig, opts: &RunOptions) -> LabResult<RunOutput> {
    let kind = ExperimentKind::FixedN;
    config.validate_for(kind)?;
    let omega = config.domain.build(config.d)?;
    let volume = omega.volume();
    let sampling_cap = capacity_ball(config.d, sampling_ball(&omega)?.inradius())?.value;
    // Cap Ω ≥ Cap(inscribed ball) bounds the mass per path.
    let mass_per_path = volume / capacity_ball(config.d, omega.inradius())?.value;
    let grid: Vec<f64> = config.n_grid.iter().map(|&n| n as f64).collect();
    let stride = shared_stride(&grid, mass_per_path, config);
    let mut session = open_session(kind, config, opts, &grid)?;
    let all = session.store.run(&grid, config.replicas, opts.jobs, |job| {
        let n = job.grid_value as u64;
        let s = sample_fixed_n(&omega, n, &path_config(config, stride), job.seed(config.master_seed))?;
        let drawn = s.n_drawn;
        let mu = interlacement_atoms(s, config)?;
        maybe_save_example(opts, config, job, &mu, &omega)?;
        let solve = cost_to_uniform(&mu, &omega, config)?;
        Ok(ReplicaResult::new(solve.cost, mu.total_mass())
            .with("n_drawn", drawn as f64)
            .with("grid_error_bound", solve.grid_error_bound))
    })?;

    // Closed form for balls; otherwise Cap(B)·P(a path from ẽ_B visits Ω).
    let (cap, cap_se) = match config.domain.capacity(config.d)? {
        Some(c) => (c, 0.0),
        None => {
            let n: f64 = all.iter().map(|c| c.job.grid_value).sum();
            let drawn: f64 = all.iter().filter_map(|c| c.result.aux_value("n_drawn")).sum();
            let f = n / drawn;
            (sampling_cap * f, sampling_cap * (f * (1.0 - f) / drawn).sqrt())
        }
    };
    let rate = config.rate_exponent();
    let groups = by_grid(&all, grid.len());
    let points: Vec<GridPoint> = grid
        .iter()
        .zip(&groups)
        .map(|(&n, g)| grid_point(n, g, (n / cap).powf(rate) * volume))
        .collect();
    let tol = &config.tolerances;
    let mut checks = Vec::new();
    let fit = if points.len() >= 2 {
        let f = fit_exponent(&points, rate, tol.fixed_n_exponent)?;
        checks.push(check(
            "rate_exponent",
            f.within_tolerance,
            f.exponent,
            rate,
            format!("fitted exponent vs 1 - p/(d-2), tolerance {}", tol.fixed_n_exponent),
        ));
        Some(f)
    } else {
        None
    };
    // f(n)/n should not increase, up to the SE bands.
    let mut worst = f64::NEG_INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let (a, b) = (&points[i], &points[j]);
            let band = tol.se_band * ((a.se_cost / a.value).powi(2) + (b.se_cost / b.value).powi(2)).sqrt();
            worst = worst.max(b.mean_cost / b.value - a.mean_cost / a.value - band);
        }
    }
    if points.len() >= 2 {
        checks.push(check(
            "per_path_cost_nonincreasing",
            worst <= 0.0,
            worst,
            0.0,
            "largest increase of f(n)/n beyond the SE band",
        ));
    }
    if let Some(one) = points.iter().find(|g| g.value == 1.0) {
        let bound = omega.diameter().powf(config.p) * one.mean_mass;
        checks.push(check("single_path_diameter_bound", one.mean_cost <= bound, one.mean_cost, bound, "n = 1 cost vs diam^p · mass"));
    }
    let last = points.last().expect("grid is nonempty");
    let constant = ConstantEstimate {
        value: last.normalized,
        se: last.normalized_se,
        ci95: (last.normalized - 1.96 * last.normalized_se, last.normalized + 1.96 * last.normalized_se),
        grid: grid.clone(),
        method: ExtrapolationTag::LastGridPoint,
        replicas: config.replicas,
    };
    let mut summary = BTreeMap::new();
    summary.insert("stride".into(), stride as f64);
    summary.insert("capacity".into(), cap);
    summary.insert("capacity_se".into(), cap_se);
    summary.insert("volume".into(), volume);
    let record = close_session(
        kind,
        config,
        session,
        RecordParts {
            grid_label: "n",
            grid: points,
            fit,
            constant: Some(constant),
            checks,
            summary,
        },
    )?;
    Ok(RunOutput { record, replicas: all })
}

/// One stationary torus replica: occupation atoms of `[0, T]` merged `stride`
/// steps at a time, and the cost to the uniform measure of mass `T`.
fn torus_replica(config: &ExperimentConfig, opts: &RunOptions, job: &Job, torus: &Domain, stride: usize) -> LabResult<ReplicaResult> {
    let t = job.grid_value;
    let atoms = |stride: usize| -> LabResult<WeightedAtoms> {
        let mut rng = job.seed(config.master_seed).rng();
        let x0 = uniform_torus_point(config.d, &mut rng);
        Ok(occupation_atoms_streaming(&x0, t, config.dt.dt, stride, Space::Torus, &mut rng)?)
    };
    let mu = atoms(stride)?;
    maybe_save_example(opts, config, job, &mu, torus)?;
    let solve = cost_to_uniform(&mu, torus, config)?;
    let mut r = ReplicaResult::new(solve.cost, mu.total_mass())
        .with("grid_error_bound", solve.grid_error_bound);
    if job.replica < config.control_replicas && stride >= 2 {
        // Same path at half the stride, so up to twice the atoms.
        let mut choice = config.solver.choice();
        if let SolverChoice::Exact(o) = &mut choice {
            o.max_entries = o.max_entries.saturating_mul(2);
        }
        let half = solve_with(&atoms(stride / 2)?, torus, config, &choice)?;
        r = r.with("half_stride_cost", half.cost);
    }
    Ok(r)
}

fn torus_points(config: &ExperimentConfig, all: &[Completed], grid: &[f64]) -> Vec<GridPoint> {
    let rate = config.rate_exponent();
    let groups = by_grid(all, grid.len());
    grid.iter()
        .zip(&groups)
        .map(|(&t, g)| {
            let mut p = grid_point(t, g, t.powf(rate));
            // Bias of the subsampling, from the paired half-stride solves.
            let diffs: RunningStats = g
                .iter()
                .filter_map(|c| c.result.aux_value("half_stride_cost").map(|h| h - c.result.cost))
                .collect();
            if diffs.count() > 0 {
                p.extra.insert("subsampling_bias".into(), diffs.mean());
                if diffs.count() > 1 {
                    p.extra.insert("subsampling_bias_se".into(), diffs.se());
                }
            }
            p
        })
        .collect()
}

/// Top half of the grid, by position.
fn top_half(points: &[GridPoint]) -> &[GridPoint] {
    &points[points.len() / 2..]
}

/// `E W^p_{T^d}(μ_T)` for a stationary path, normalized by `T^{1-p/(d-2)}`,
/// with a log-log exponent fit and the comparison against a reference
/// constant.
pub fn run_torus_rate(config: &ExperimentConfig, opts: &RunOptions) -> LabResult<RunOutput> {
    let kind = ExperimentKind::TorusRate;
    config.validate_for(kind)?;
    let torus = config.torus()?;
    let grid = config.t_grid.clone();
    let stride = shared_stride(&grid, 1.0, config);
    let mut session = open_session(kind, config, opts, &grid)?;
    let all = session
        .store
        .run(&grid, config.replicas, opts.jobs, |job| torus_replica(config, opts, job, &torus, stride))?;
    let points = torus_points(config, &all, &grid);
    let tol = &config.tolerances;
    let rate = config.rate_exponent();
    let mut checks = Vec::new();
    let mut summary = BTreeMap::new();
    summary.insert("stride".into(), stride as f64);
    let fit = if points.len() >= 2 {
        let f = fit_exponent(&points, rate, tol.torus_exponent)?;
        checks.push(check(
            "rate_exponent",
            f.within_tolerance,
            f.exponent,
            rate,
            format!("fitted exponent vs 1 - p/(d-2), tolerance {}", tol.torus_exponent),
        ));
        Some(f)
    } else {
        None
    };
    let top = top_half(&points);
    let means: RunningStats = top.iter().map(|g| g.normalized).collect();
    let cv = if top.len() >= 2 { means.sd() / means.mean() } else { 0.0 };
    checks.push(check(
        "top_half_cv",
        cv < tol.top_half_cv,
        cv,
        tol.top_half_cv,
        "coefficient of variation of the normalized means over the top half of the grid",
    ));
    let limsup = top.iter().map(|g| g.normalized).fold(f64::NEG_INFINITY, f64::max);
    summary.insert("limsup_estimate".into(), limsup);
    if let Some(c) = config.c_hat {
        let bound = c * (1.0 + tol.limsup_margin);
        checks.push(check(
            "limsup_below_constant",
            limsup <= bound,
            limsup,
            bound,
            "largest normalized mean over the top half vs the reference constant with margin",
        ));
    }
    let record = close_session(
        kind,
        config,
        session,
        RecordParts {
            grid_label: "T",
            grid: points,
            fit,
            constant: None,
            checks,
            summary,
        },
    )?;
    Ok(RunOutput { record, replicas: all })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationReport {
    pub horizons: Vec<f64>,
    pub sd: Vec<f64>,
    pub sd_se: Vec<f64>,
    pub spearman_rho: f64,
    pub p_decreasing: f64,
    pub exact: bool,
    pub passed: bool,
}

/// Rank-correlation trend test on the standard deviations of the
/// normalized costs.
pub fn concentration_trend(points: &[GridPoint], p_threshold: f64) -> LabResult<ConcentrationReport> {
    if points.len() < 2 {
        return Err(LabError::Config("a trend needs at least two horizons".into()));
    }
    let horizons: Vec<f64> = points.iter().map(|g| g.value).collect();
    let sd: Vec<f64> = points.iter().map(|g| g.normalized_sd).collect();
    let (rho, p, exact) = if points.len() >= 3 {
        let s = spearman(&horizons, &sd)?;
        (s.rho, s.p_decreasing, s.exact)
    } else {
        // Two points: the only rank statistic is the sign.
        let down = sd[1] < sd[0];
        (if down { -1.0 } else { 1.0 }, if down { 0.5 } else { 1.0 }, true)
    };
    Ok(ConcentrationReport {
        horizons,
        sd_se: points.iter().map(|g| g.normalized_sd_se).collect(),
        sd,
        spearman_rho: rho,
        p_decreasing: p,
        exact,
        passed: p < p_threshold,
    })
}

/// Standard deviation of `W^p/T^{1-p/(d-2)}` across horizons and the
/// decreasing-trend test. Samples are the torus-rate replicas.
pub fn run_concentration(config: &ExperimentConfig, opts: &RunOptions) -> LabResult<(ConcentrationReport, RunOutput)> {
    let kind = ExperimentKind::Concentration;
    config.validate_for(kind)?;
    let torus = config.torus()?;
    let grid = config.t_grid.clone();
    let stride = shared_stride(&grid, 1.0, config);
    let mut session = open_session(kind, config, opts, &grid)?;
    let all = session
        .store
        .run(&grid, config.replicas, opts.jobs, |job| torus_replica(config, opts, job, &torus, stride))?;
    let points = torus_points(config, &all, &grid);
    let report = concentration_trend(&points, config.tolerances.trend_p_value)?;
    let mut checks = vec![check(
        "sd_decreasing_trend",
        report.passed,
        report.p_decreasing,
        config.tolerances.trend_p_value,
        format!("one-sided Spearman p-value, rho = {}", report.spearman_rho),
    )];
    let finite = report.sd.iter().all(|s| s.is_finite() && *s > 0.0);
    checks.push(check("sd_finite_positive", finite, report.sd.iter().cloned().fold(f64::INFINITY, f64::min), 0.0, "smallest SD"));
    let mut summary = BTreeMap::new();
    summary.insert("stride".into(), stride as f64);
    summary.insert("spearman_rho".into(), report.spearman_rho);
    summary.insert("p_decreasing".into(), report.p_decreasing);
    let record = close_session(
        kind,
        config,
        session,
        RecordParts {
            grid_label: "T",
            grid: points,
            fit: None,
            constant: None,
            checks,
            summary,
        },
    )?;
    Ok((report, RunOutput { record, replicas: all }))
}

/// `f(Q_{mL})/|Q_{mL}| ≤ f(Q_L)/|Q_L| + slack` for `f(Q) = E W^p_Q(𝓘_u ↾ Q)`,
/// with slack `C·L^{-r/2}` plus two combined standard errors.
pub fn run_cube_subadditivity(config: &ExperimentConfig, opts: &RunOptions) -> LabResult<RunOutput> {
    let kind = ExperimentKind::Subadd;
    config.validate_for(kind)?;
    let s = config.subadd;
    let big = s.side * s.m as f64;
    let grid = if s.m == 1 { vec![s.side] } else { vec![s.side, big] };
    let stride = stride_for(s.intensity * big.powi(config.d as i32), config.dt.dt, config.max_atoms);
    let mut session = open_session(kind, config, opts, &grid)?;
    let all = session.store.run(&grid, config.replicas, opts.jobs, |job| {
        let cube = Domain::euclidean_cube(config.d, job.grid_value)?;
        let sample = sample_interlacement(&cube, s.intensity, &path_config(config, stride), job.seed(config.master_seed))?;
        let mu = interlacement_atoms(sample, config)?;
        maybe_save_example(opts, config, job, &mu, &cube)?;
        let solve = cost_to_uniform(&mu, &cube, config)?;
        Ok(ReplicaResult::new(solve.cost, mu.total_mass()))
    })?;
    let groups = by_grid(&all, grid.len());
    let points: Vec<GridPoint> = grid
        .iter()
        .zip(&groups)
        .map(|(&side, g)| grid_point(side, g, side.powi(config.d as i32)))
        .collect();
    let small = &points[0];
    let large = points.last().expect("grid is nonempty");
    let r = config.subadd_r();
    let slack = s.slack_c * s.side.powf(-r / 2.0);
    let band = config.tolerances.se_band * (small.normalized_se.powi(2) + large.normalized_se.powi(2)).sqrt();
    let excess = large.normalized - small.normalized;
    let checks = vec![check(
        "cube_subadditivity",
        excess <= slack + band,
        excess,
        slack + band,
        format!("f(Q_mL)/|Q_mL| - f(Q_L)/|Q_L| vs C L^(-r/2) = {slack} plus {} SE", config.tolerances.se_band),
    )];
    let mut summary = BTreeMap::new();
    summary.insert("stride".into(), stride as f64);
    summary.insert("r".into(), r);
    summary.insert("slack".into(), slack);
    let record = close_session(
        kind,
        config,
        session,
        RecordParts {
            grid_label: "side",
            grid: points,
            fit: None,
            constant: None,
            checks,
            summary,
        },
    )?;
    Ok(RunOutput { record, replicas: all })
}

/// Stationary torus hitting of a small ball within `(σ, ρ]` and the
/// frequencies of repeated entrances.
pub fn run_hitting_validation(config: &ExperimentConfig, opts: &RunOptions) -> LabResult<RunOutput> {
    let kind = ExperimentKind::Hitting;
    config.validate_for(kind)?;
    let h = config.hitting;
    let stepping = config.dt.adaptive();
    let grid = vec![h.rho];
    let mut session = open_session(kind, config, opts, &grid)?;
    // cost = hit indicator on (σ, ρ], mass = 1 per trial.
    let all = session.store.run(&grid, config.replicas, opts.jobs, |job| {
        let mut rng = job.seed(config.master_seed).rng();
        let t = torus_hit_once(h.l, h.rho, config.d, stepping, true, &mut rng)?;
        let hit = t.hit_time.is_some_and(|s| s > h.sigma && s <= h.rho);
        let mut r = ReplicaResult::new(if hit { 1.0 } else { 0.0 }, 1.0);
        if let Some(s) = t.hit_time {
            r = r.with("hit_time", s);
        }
        if let Some(a) = t.angular_coordinate {
            r = r.with("angular", a);
        }
        Ok(r)
    })?;
    let trials: Vec<TorusHitTrial> = all
        .iter()
        .map(|c| TorusHitTrial {
            hit_time: c.result.aux_value("hit_time"),
            angular_coordinate: c.result.aux_value("angular"),
        })
        .collect();
    let rep = torus_hitting_summary(&trials, h.l, h.rho, h.sigma, config.d)?;
    let pred = rep.prediction.probability;
    let allowance = (3.0 * rep.standard_error).max(0.1 * pred);
    let gap = (rep.empirical_probability - pred).abs();
    let mut checks = vec![check(
        "leading_order_probability",
        gap <= allowance,
        rep.empirical_probability,
        pred,
        format!("|empirical - prediction| = {gap} vs max(3 SE, 10%) = {allowance}"),
    )];
    if h.sigma == h.rho {
        checks.push(check("empty_window", rep.hits == 0, rep.hits as f64, 0.0, "sigma = rho leaves no time to hit"));
    }
    if let Some(ks) = &rep.angular_ks {
        checks.push(check("angular_uniformity", ks.p_value > 0.01, ks.p_value, 0.01, "KS p-value of the hit direction"));
    }
    let mut summary = BTreeMap::new();
    summary.insert("empirical_probability".into(), rep.empirical_probability);
    summary.insert("standard_error".into(), rep.standard_error);
    summary.insert("prediction".into(), pred);
    summary.insert("error_term".into(), rep.prediction.error_term);
    summary.insert("regime_ok".into(), if rep.prediction.regime_ok { 1.0 } else { 0.0 });
    if h.iterated_replicas > 0 {
        let freqs = iterated_hit_frequencies(
            h.l,
            h.big_l,
            h.rho,
            config.d,
            h.k_max,
            h.iterated_replicas,
            stepping,
            SeedSpec::new(config.master_seed, 2),
        )?;
        let mut decays = true;
        for w in freqs.windows(2) {
            let band = config.tolerances.se_band * (w[0].standard_error.powi(2) + w[1].standard_error.powi(2)).sqrt();
            decays &= w[1].frequency <= w[0].frequency + band;
        }
        for f in &freqs {
            summary.insert(format!("iterated_k{}", f.k), f.frequency);
            summary.insert(format!("iterated_k{}_se", f.k), f.standard_error);
        }
        checks.push(check(
            "iterated_hits_decay",
            decays,
            freqs.last().map_or(0.0, |f| f.frequency),
            0.0,
            "P(k+1 entrances) <= P(k entrances) within the SE band",
        ));
    }
    let point = grid_point(h.rho, &all.iter().collect::<Vec<_>>(), 1.0);
    let record = close_session(
        kind,
        config,
        session,
        RecordParts {
            grid_label: "rho",
            grid: vec![point],
            fit: None,
            constant: None,
            checks,
            summary,
        },
    )?;
    Ok(RunOutput { record, replicas: all })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: ExperimentKind) -> ExperimentConfig {
        ExperimentConfig {
            experiment: Some(kind),
            replicas: 3,
            grid_n: 4,
            max_atoms: 60,
            dt: crate::config::DtPolicy {
                dt: 4e-3,
                ..Default::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn stride_budget() {
        assert_eq!(stride_for(1.0, 1e-3, 1000), 1);
        assert_eq!(stride_for(1.0, 1e-3, 999), 2);
        assert_eq!(stride_for(0.0, 1e-3, 10), 1);
    }

    #[test]
    fn constant_pipeline_small() {
        let c = ExperimentConfig {
            u_grid: vec![1.0, 2.0, 4.0],
            depoissonize: true,
            extrapolation: Extrapolation::Richardson { order: 0.5 },
            ..small(ExperimentKind::Constant)
        };
        let (est, out) = run_constant_estimation(&c, &RunOptions::in_memory()).unwrap();
        assert_eq!(out.record.grid.len(), 3);
        assert_eq!(est.method, ExtrapolationTag::Richardson);
        assert!(out.record.check("normalized_positive").unwrap().passed);
        assert!(out.record.grid.iter().all(|g| g.se_cost.is_finite()));
        assert!(out.record.check("depoissonized_agreement").is_some());
    }

    #[test]
    fn fixed_n_single_path_bound() {
        let c = ExperimentConfig {
            n_grid: vec![1, 2],
            domain: crate::config::DomainSpec {
                shape: crate::config::ShapeKind::Ball,
                size: 1.0,
            },
            ..small(ExperimentKind::FixedN)
        };
        let out = run_fixed_n_limit(&c, &RunOptions::in_memory()).unwrap();
        assert!(out.record.check("single_path_diameter_bound").unwrap().passed);
        assert_eq!(out.record.summary["capacity"], 2.0 * std::f64::consts::PI);
    }

    #[test]
    fn torus_pipeline_and_trend() {
        let c = ExperimentConfig {
            t_grid: vec![0.5, 1.0, 2.0],
            control_replicas: 1,
            max_atoms: 100,
            c_hat: Some(10.0),
            ..small(ExperimentKind::TorusRate)
        };
        let out = run_torus_rate(&c, &RunOptions::in_memory()).unwrap();
        assert!(out.record.fit.is_some());
        assert!(out.record.check("limsup_below_constant").is_some());
        assert!(out.record.grid[2].extra.contains_key("subsampling_bias"));
        let rep = concentration_trend(&out.record.grid, 0.05).unwrap();
        assert_eq!(rep.sd.len(), 3);
        assert!(concentration_trend(&out.record.grid[..1], 0.05).is_err());
    }

    #[test]
    fn subadd_m1_is_trivial_equality() {
        let c = ExperimentConfig {
            subadd: crate::config::SubaddSpec {
                m: 1,
                ..Default::default()
            },
            ..small(ExperimentKind::Subadd)
        };
        let out = run_cube_subadditivity(&c, &RunOptions::in_memory()).unwrap();
        let ch = out.record.check("cube_subadditivity").unwrap();
        assert!(ch.passed);
        assert_eq!(ch.value, 0.0);
    }

    #[test]
    fn hitting_empty_window() {
        let c = ExperimentConfig {
            hitting: crate::config::HittingSpec {
                l: 0.05,
                rho: 0.2,
                sigma: 0.2,
                ..Default::default()
            },
            replicas: 50,
            dt: crate::config::DtPolicy {
                dt: 1e-4,
                ..Default::default()
            },
            ..small(ExperimentKind::Hitting)
        };
        let out = run_hitting_validation(&c, &RunOptions::in_memory()).unwrap();
        assert!(out.record.check("empty_window").unwrap().passed);
        assert_eq!(out.record.summary["prediction"], 0.0);
    }

    #[test]
    fn reproducible_records() {
        let c = ExperimentConfig {
            t_grid: vec![0.5, 1.0],
            ..small(ExperimentKind::TorusRate)
        };
        let a = run_torus_rate(&c, &RunOptions::in_memory()).unwrap().record;
        let b = run_torus_rate(&c, &RunOptions { out: None, jobs: 2 }).unwrap().record;
        assert_eq!(a.numeric_payload(), b.numeric_payload());
    }
}
