//! Brownian motion with generator ½Δ on ℝᵈ and on the flat torus.
//!
//! Increments over a step of length `h` are `√h · N(0, I)`. Paths are
//! either materialized as [`PathSample`]s or streamed through a visitor so
//! that long runs never hold every position in memory.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{displacement, wrap_in_place, Domain, Space, WeightedAtoms};
use crate::rng::{NoiseSource, SeedSpec};

/// Time step keeping the per-step displacement near a tenth of
/// `length_scale`.
pub fn recommended_dt(length_scale: f64) -> f64 {
    let s = length_scale / 10.0;
    s * s
}

/// Discretized trajectory. Step `i` goes from position `i` to `i+1` and
/// lasts `dt`, except the last one which lasts `last_dt` (a partial step when
/// the horizon is not a multiple of `dt`).
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub t0: f64,
    pub dt: f64,
    pub last_dt: f64,
    pub dim: usize,
    pub space: Space,
    positions: Vec<f64>,
}

impl PathSample {
    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.len().saturating_sub(1)
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last(&self) -> &[f64] {
        self.position(self.len() - 1)
    }

    /// Duration of step `i`.
    pub fn step_duration(&self, i: usize) -> f64 {
        if i + 1 == self.steps() {
            self.last_dt
        } else {
            self.dt
        }
    }

    /// Elapsed time `T` covered by the path.
    pub fn elapsed(&self) -> f64 {
        match self.steps() {
            0 => 0.0,
            n => (n - 1) as f64 * self.dt + self.last_dt,
        }
    }
}

/// Split `[0, t]` into full steps of `dt` plus a possibly shorter final step.
/// Returns `(full_steps, remainder)`.
fn step_plan(t: f64, dt: f64) -> (usize, f64) {
    let full = libm::floor(t / dt) as usize;
    let mut rem = t - full as f64 * dt;
    if rem <= 1e-12 * t.max(dt) {
        rem = 0.0;
    }
    (full, rem)
}

fn check_start(x0: &[f64]) -> Result<()> {
    if x0.is_empty() {
        return Err(Error::invalid("x0", "dimension must be at least 1"));
    }
    if x0.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("starting point"));
    }
    Ok(())
}

#[inline]
fn gaussian_step<N: NoiseSource>(x: &[f64], h: f64, space: Space, noise: &mut N, y: &mut [f64]) {
    let s = libm::sqrt(h);
    for (yk, xk) in y.iter_mut().zip(x) {
        *yk = xk + s * noise.standard_normal();
    }
    if space == Space::Torus {
        wrap_in_place(y);
    }
}

/// Run a path for time `t` with step `dt`, calling `visit(position,
/// duration)` for the left endpoint of every step. Returns the final
/// position.
pub fn walk<N: NoiseSource>(
    x0: &[f64],
    t: f64,
    dt: f64,
    space: Space,
    noise: &mut N,
    mut visit: impl FnMut(&[f64], f64),
) -> Result<Vec<f64>> {
    check_start(x0)?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::invalid("t", "must be finite and nonnegative"));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", "must be positive"));
    }
    let mut x = x0.to_vec();
    if space == Space::Torus {
        wrap_in_place(&mut x);
    }
    let mut y = vec![0.0; x.len()];
    let (full, rem) = step_plan(t, dt);
    for _ in 0..full {
        visit(&x, dt);
        gaussian_step(&x, dt, space, noise, &mut y);
        core::mem::swap(&mut x, &mut y);
    }
    if rem > 0.0 {
        visit(&x, rem);
        gaussian_step(&x, rem, space, noise, &mut y);
        core::mem::swap(&mut x, &mut y);
    }
    Ok(x)
}

pub fn sample_bm_path(x0: &[f64], t: f64, dt: f64, space: Space, seed: SeedSpec) -> Result<PathSample> {
    sample_bm_path_with(x0, t, dt, space, &mut seed.rng())
}

/// [`sample_bm_path`] with an explicit noise source.
pub fn sample_bm_path_with<N: NoiseSource>(x0: &[f64], t: f64, dt: f64, space: Space, noise: &mut N) -> Result<PathSample> {
    check_start(x0)?;
    let dim = x0.len();
    let (full, rem) = if t > 0.0 && dt > 0.0 { step_plan(t, dt) } else { (0, 0.0) };
    let mut positions = Vec::with_capacity((full + 2) * dim);
    let mut last_dt = dt;
    let last = walk(x0, t, dt, space, noise, |x, h| {
        positions.extend_from_slice(x);
        last_dt = h;
    })?;
    positions.extend_from_slice(&last);
    if full == 0 && rem == 0.0 {
        last_dt = 0.0;
    }
    Ok(PathSample {
        t0: 0.0,
        dt,
        last_dt,
        dim,
        space,
        positions,
    })
}

/// Uniform point of the torus fundamental cell.
pub fn uniform_torus_point<N: NoiseSource>(dim: usize, noise: &mut N) -> Vec<f64> {
    (0..dim).map(|_| noise.uniform() - 0.5).collect()
}

/// Occupation measure of a path: every `stride`-th left endpoint becomes an
/// atom carrying the duration of the `stride` steps it stands for.
pub fn occupation_atoms(path: &PathSample, stride: usize) -> Result<WeightedAtoms> {
    if stride == 0 {
        return Err(Error::invalid("stride", "must be at least 1"));
    }
    if path.is_empty() {
        return Err(Error::Degenerate("empty path".into()));
    }
    let steps = path.steps();
    let mut out = WeightedAtoms::with_capacity(path.dim, path.space, steps / stride + 1);
    let mut i = 0;
    while i < steps {
        let end = (i + stride).min(steps);
        let mass: f64 = (i..end).map(|k| path.step_duration(k)).sum();
        out.push_unchecked(path.position(i), mass);
        i = end;
    }
    Ok(out)
}

/// Streaming version of `occupation_atoms(sample_bm_path(..), stride)`.
pub fn occupation_atoms_streaming<N: NoiseSource>(
    x0: &[f64],
    t: f64,
    dt: f64,
    stride: usize,
    space: Space,
    noise: &mut N,
) -> Result<WeightedAtoms> {
    if stride == 0 {
        return Err(Error::invalid("stride", "must be at least 1"));
    }
    let dim = x0.len();
    let mut out = WeightedAtoms::with_capacity(dim, space, (t / dt) as usize / stride + 2);
    let mut anchor = vec![0.0; dim];
    let mut acc = 0.0;
    let mut count = 0usize;
    walk(x0, t, dt, space, noise, |x, h| {
        if count == 0 {
            anchor.copy_from_slice(x);
        }
        acc += h;
        count += 1;
        if count == stride {
            out.push_unchecked(&anchor, acc);
            acc = 0.0;
            count = 0;
        }
    })?;
    if count > 0 {
        out.push_unchecked(&anchor, acc);
    }
    Ok(out)
}

/// `Σ duration_i · 1{x_i ∈ Ω}` over the left endpoints of the path.
pub fn occupation_mass_in(path: &PathSample, domain: &Domain) -> Result<f64> {
    if path.space != domain.space() {
        return Err(Error::SpaceMismatch {
            expected: domain.space().name(),
        });
    }
    if path.dim != domain.dim() {
        return Err(Error::DimensionMismatch {
            expected: domain.dim(),
            found: path.dim,
        });
    }
    let mut total = 0.0;
    for i in 0..path.steps() {
        if domain.contains(path.position(i)) {
            total += path.step_duration(i);
        }
    }
    Ok(total)
}

/// Time-step policy for event detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stepping {
    Fixed { dt: f64 },
    /// `dt = clamp((gap / resolution)², dt_min, dt_max)` where `gap` is the
    /// distance to the boundary being watched.
    Adaptive { dt_min: f64, dt_max: f64, resolution: f64 },
}

impl Stepping {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Stepping::Fixed { dt } if dt > 0.0 && dt.is_finite() => Ok(()),
            Stepping::Fixed { .. } => Err(Error::invalid("dt", "must be positive and finite")),
            Stepping::Adaptive {
                dt_min,
                dt_max,
                resolution,
            } => {
                if !(dt_min > 0.0 && dt_min <= dt_max && resolution > 0.0) {
                    Err(Error::invalid("stepping", "need 0 < dt_min <= dt_max and resolution > 0"))
                } else {
                    Ok(())
                }
            }
        }
    }

    #[inline]
    pub fn dt_for_gap(&self, gap: f64) -> f64 {
        match *self {
            Stepping::Fixed { dt } => dt,
            Stepping::Adaptive {
                dt_min,
                dt_max,
                resolution,
            } => {
                let s = gap.abs() / resolution;
                (s * s).clamp(dt_min, dt_max)
            }
        }
    }

    /// Same policy after the Brownian rescaling `x → ρx`, `t → ρ²t`.
    pub fn scaled(&self, rho: f64) -> Stepping {
        let r2 = rho * rho;
        match *self {
            Stepping::Fixed { dt } => Stepping::Fixed { dt: dt * r2 },
            Stepping::Adaptive {
                dt_min,
                dt_max,
                resolution,
            } => Stepping::Adaptive {
                dt_min: dt_min * r2,
                dt_max: dt_max * r2,
                resolution,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitOptions {
    pub t_max: f64,
    pub stepping: Stepping,
    pub bridge_correction: bool,
    /// Euclidean only: give up once the path is farther than this from the
    /// target's center.
    pub escape_radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub time: f64,
    pub point: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HitOutcome {
    pub hit: Option<Hit>,
    /// Position when the simulation stopped (the raw endpoint of the
    /// hitting step when there was a hit).
    pub final_state: Vec<f64>,
    pub final_time: f64,
    pub steps: u64,
    pub escaped: bool,
}

// Fraction s in (0, 1] along x + s·delta where the signed distance changes
// sign. `inside_at_end` tells which side the endpoint is on.
fn bisect_crossing(domain: &Domain, x: &[f64], delta: &[f64], inside_at_end: bool, buf: &mut [f64]) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..48 {
        let mid = 0.5 * (lo + hi);
        for k in 0..x.len() {
            buf[k] = x[k] + mid * delta[k];
        }
        let inside = domain.signed_distance(buf) <= 0.0;
        if inside == inside_at_end {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn boundary_point(domain: &Domain, x: &[f64], delta: &[f64], s: f64) -> Vec<f64> {
    let d = x.len();
    let mut p = vec![0.0; d];
    for k in 0..d {
        p[k] = x[k] + s * delta[k];
    }
    let mut out = vec![0.0; d];
    domain.project_to_boundary(&p, &mut out);
    out
}

/// First entrance into `target`.
///
/// With the bridge correction, a step between two outside points counts as
/// a crossing with probability `exp(-2ab/h)`, where `a` and `b` are the
/// endpoint distances to the boundary and `h` the step length (the
/// half-space crossing law of a Brownian bridge).
pub fn first_hit<N: NoiseSource>(x0: &[f64], target: &Domain, opts: &HitOptions, noise: &mut N) -> Result<HitOutcome> {
    check_start(x0)?;
    if x0.len() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            found: x0.len(),
        });
    }
    opts.stepping.validate()?;
    if !(opts.t_max >= 0.0) {
        return Err(Error::invalid("t_max", "must be nonnegative"));
    }
    let space = target.space();
    if opts.escape_radius.is_some() && space != Space::Euclidean {
        return Err(Error::SpaceMismatch { expected: "euclidean" });
    }
    let d = x0.len();
    let mut x = x0.to_vec();
    if space == Space::Torus {
        wrap_in_place(&mut x);
    }
    if target.contains(&x) {
        return Ok(HitOutcome {
            hit: Some(Hit { time: 0.0, point: x.clone() }),
            final_state: x,
            final_time: 0.0,
            steps: 0,
            escaped: false,
        });
    }
    let center = target.center().to_vec();
    let escape_sq = opts.escape_radius.map(|r| r * r);
    let mut y = vec![0.0; d];
    let mut delta = vec![0.0; d];
    let mut buf = vec![0.0; d];
    let mut t = 0.0;
    let mut steps = 0u64;
    let mut a = target.signed_distance(&x);
    while t < opts.t_max {
        let mut h = opts.stepping.dt_for_gap(a);
        if t + h >= opts.t_max {
            h = opts.t_max - t;
        }
        gaussian_step(&x, h, space, noise, &mut y);
        steps += 1;
        let b = target.signed_distance(&y);
        if b <= 0.0 {
            displacement(space, &y, &x, &mut delta);
            let s = bisect_crossing(target, &x, &delta, true, &mut buf);
            let point = boundary_point(target, &x, &delta, s);
            return Ok(HitOutcome {
                hit: Some(Hit { time: t + s * h, point }),
                final_state: y,
                final_time: t + h,
                steps,
                escaped: false,
            });
        }
        if opts.bridge_correction {
            let p = libm::exp(-2.0 * a * b / h);
            if noise.uniform() < p {
                displacement(space, &y, &x, &mut delta);
                let s = a / (a + b);
                let point = boundary_point(target, &x, &delta, s);
                return Ok(HitOutcome {
                    hit: Some(Hit { time: t + s * h, point }),
                    final_state: y,
                    final_time: t + h,
                    steps,
                    escaped: false,
                });
            }
        }
        t += h;
        core::mem::swap(&mut x, &mut y);
        a = b;
        if let Some(r2) = escape_sq {
            if crate::geometry::euclidean_distance_sq(&x, &center) > r2 {
                return Ok(HitOutcome {
                    hit: None,
                    final_state: x,
                    final_time: t,
                    steps,
                    escaped: true,
                });
            }
        }
    }
    Ok(HitOutcome {
        hit: None,
        final_state: x,
        final_time: t,
        steps,
        escaped: false,
    })
}

/// Fixed-step hitting of a ball.
pub fn first_hit_ball(
    x0: &[f64],
    ball: &Domain,
    t_max: f64,
    dt: f64,
    seed: SeedSpec,
    bridge_correction: bool,
) -> Result<HitOutcome> {
    if !ball.is_ball() {
        return Err(Error::invalid("ball", "domain must be a ball"));
    }
    let opts = HitOptions {
        t_max,
        stepping: Stepping::Fixed { dt },
        bridge_correction,
        escape_radius: None,
    };
    first_hit(x0, ball, &opts, &mut seed.rng())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitOptions {
    pub t_max: f64,
    pub stepping: Stepping,
    pub bridge_correction: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExitOutcome {
    Exited { time: f64, point: Vec<f64>, steps: u64 },
    /// The time budget ran out inside the domain.
    Censored { time: f64, state: Vec<f64>, steps: u64 },
}

impl ExitOutcome {
    pub fn time(&self) -> f64 {
        match self {
            ExitOutcome::Exited { time, .. } | ExitOutcome::Censored { time, .. } => *time,
        }
    }

    pub fn is_censored(&self) -> bool {
        matches!(self, ExitOutcome::Censored { .. })
    }
}

/// First exit from `domain` started inside it.
pub fn first_exit<N: NoiseSource>(x0: &[f64], domain: &Domain, opts: &ExitOptions, noise: &mut N) -> Result<ExitOutcome> {
    check_start(x0)?;
    if x0.len() != domain.dim() {
        return Err(Error::DimensionMismatch {
            expected: domain.dim(),
            found: x0.len(),
        });
    }
    opts.stepping.validate()?;
    let space = domain.space();
    let d = x0.len();
    let mut x = x0.to_vec();
    if space == Space::Torus {
        wrap_in_place(&mut x);
    }
    if !domain.contains(&x) {
        return Err(Error::invalid("x0", "must lie inside the domain"));
    }
    let mut y = vec![0.0; d];
    let mut delta = vec![0.0; d];
    let mut buf = vec![0.0; d];
    let mut t = 0.0;
    let mut steps = 0u64;
    let mut a = -domain.signed_distance(&x);
    while t < opts.t_max {
        let mut h = opts.stepping.dt_for_gap(a);
        if t + h >= opts.t_max {
            h = opts.t_max - t;
        }
        gaussian_step(&x, h, space, noise, &mut y);
        steps += 1;
        let b = -domain.signed_distance(&y);
        if b < 0.0 {
            displacement(space, &y, &x, &mut delta);
            let s = bisect_crossing(domain, &x, &delta, false, &mut buf);
            return Ok(ExitOutcome::Exited {
                time: t + s * h,
                point: boundary_point(domain, &x, &delta, s),
                steps,
            });
        }
        if opts.bridge_correction && a > 0.0 {
            let p = libm::exp(-2.0 * a * b / h);
            if noise.uniform() < p {
                displacement(space, &y, &x, &mut delta);
                let s = if a + b > 0.0 { a / (a + b) } else { 0.5 };
                return Ok(ExitOutcome::Exited {
                    time: t + s * h,
                    point: boundary_point(domain, &x, &delta, s),
                    steps,
                });
            }
        }
        t += h;
        core::mem::swap(&mut x, &mut y);
        a = b;
    }
    Ok(ExitOutcome::Censored { time: t, state: x, steps })
}

/// Exit from a ball with the bridge correction.
pub fn first_exit_ball(x0: &[f64], ball: &Domain, t_max: f64, dt: f64, seed: SeedSpec) -> Result<ExitOutcome> {
    if !ball.is_ball() {
        return Err(Error::invalid("ball", "domain must be a ball"));
    }
    let opts = ExitOptions {
        t_max,
        stepping: Stepping::Fixed { dt },
        bridge_correction: true,
    };
    first_exit(x0, ball, &opts, &mut seed.rng())
}

/// Heat kernel of the torus with the truncation error of the lattice sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatKernelValue {
    pub density: f64,
    pub truncation_bound: f64,
}

/// `p_t(x, y) = Σ_{z ∈ ℤᵈ} (2πt)^{-d/2} exp(-|x - y - z|² / 2t)` truncated to
/// `|z_k| ≤ cutoff`. The sum factorizes over coordinates, which is how it is
/// evaluated.
pub fn heat_kernel_torus(x: &[f64], y: &[f64], t: f64, lattice_cutoff: usize) -> Result<HeatKernelValue> {
    if !(t > 0.0) {
        return Err(Error::invalid("t", "must be positive"));
    }
    if lattice_cutoff == 0 {
        return Err(Error::invalid("lattice_cutoff", "must be at least 1"));
    }
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    let norm = 1.0 / libm::sqrt(2.0 * core::f64::consts::PI * t);
    let k = lattice_cutoff as f64;
    // Every omitted image sits at distance ≥ |z| - 1/2 ≥ k + 1/2.
    let edge = k + 0.5;
    let tail = 2.0 * norm * libm::exp(-edge * edge / (2.0 * t)) + libm::erfc(edge / libm::sqrt(2.0 * t));
    let mut product = 1.0;
    let mut upper = 1.0;
    for (a, b) in x.iter().zip(y) {
        let diff = crate::geometry::wrap_coordinate(a - b);
        let mut s = 0.0;
        for z in -(lattice_cutoff as i64)..=(lattice_cutoff as i64) {
            let r = diff - z as f64;
            s += libm::exp(-r * r / (2.0 * t));
        }
        s *= norm;
        product *= s;
        upper *= s + tail;
    }
    Ok(HeatKernelValue {
        density: product,
        truncation_bound: upper - product,
    })
}
