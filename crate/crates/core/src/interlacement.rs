//! Occupation measure of Brownian interlacements restricted to a compact set.
//!
//! `𝓘_u ↾ K` is the superposition of the occupation measures, restricted to
//! `K`, of `N ~ Poisson(u Cap(K))` independent paths entering from the
//! normalized equilibrium measure `ẽ_K`. Balls are sampled directly (`ẽ_K`
//! is uniform on the sphere). A cube `K` is sampled through its enclosing
//! ball `B`: paths of `𝓘_u ↾ B` are drawn and restricted to `K`, which by the
//! restriction identity has the law of `𝓘_u ↾ K` without needing `Cap(K)` or
//! `ẽ_K` explicitly. Paths that never visit `K` simply contribute nothing.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{euclidean_distance_sq, Domain, Space, WeightedAtoms};
use crate::potential::{capacity_ball, sphere_point};
use crate::rng::{poisson, NoiseSource, SeedSpec};
use crate::stats::{ks_two_sample, linear_regression, KsResult, RunningStats};

/// Discretization of one infinite-horizon path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathConfig {
    /// Step used inside `K` and right next to it.
    pub dt_in: f64,
    /// Outside `K` the step is `clamp((gap / resolution)², dt_in, dt_max)`.
    pub resolution: f64,
    pub dt_max: f64,
    /// Kill radius around the sampling ball's center; `None` means 50 times
    /// the sampling radius.
    pub r_max: Option<f64>,
    /// Merge this many consecutive in-`K` steps into one atom.
    pub stride: usize,
}

impl PathConfig {
    pub fn new(dt_in: f64) -> Self {
        PathConfig {
            dt_in,
            resolution: 4.0,
            dt_max: f64::INFINITY,
            r_max: None,
            stride: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_in > 0.0 && self.dt_in.is_finite()) {
            return Err(Error::invalid("dt_in", "must be positive and finite"));
        }
        if !(self.resolution > 0.0) || !(self.dt_max >= self.dt_in) {
            return Err(Error::invalid("path config", "need resolution > 0 and dt_max >= dt_in"));
        }
        if self.stride == 0 {
            return Err(Error::invalid("stride", "must be at least 1"));
        }
        if let Some(r) = self.r_max {
            if !(r > 0.0) {
                return Err(Error::invalid("r_max", "must be positive"));
            }
        }
        Ok(())
    }

    /// Configuration matching the Brownian rescaling `x → ρx`, `t → ρ²t`.
    pub fn scaled(&self, rho: f64) -> Self {
        PathConfig {
            dt_in: self.dt_in * rho * rho,
            resolution: self.resolution,
            dt_max: self.dt_max * rho * rho,
            r_max: self.r_max.map(|r| r * rho),
            stride: self.stride,
        }
    }

    fn kill_radius(&self, sampling_radius: f64) -> f64 {
        self.r_max.unwrap_or(50.0 * sampling_radius)
    }

    #[inline]
    fn step(&self, gap: f64) -> f64 {
        if gap <= 0.0 {
            self.dt_in
        } else {
            let s = gap / self.resolution;
            (s * s).clamp(self.dt_in, self.dt_max)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationReport {
    pub r_max: f64,
    /// Probability that a path killed at `r_max` would come back to the
    /// sampling ball, `(a / r_max)^{d-2}`.
    pub return_probability: f64,
    /// Expected occupation of `K` lost by the killing.
    pub neglected_mass_estimate: f64,
    /// Same, inflated by the Harnack factor `((r_max + a)/(r_max - a))^d` that
    /// covers the non-uniform return law.
    pub neglected_mass_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterlacementSample {
    pub domain: Domain,
    pub intensity: Option<f64>,
    /// Paths that visited `K`.
    pub n_paths: u64,
    /// Paths started on the sampling sphere (equal to `n_paths` for balls).
    pub n_drawn: u64,
    pub occupation: WeightedAtoms,
    pub truncation: TruncationReport,
    pub steps: u64,
}

impl InterlacementSample {
    pub fn mass(&self) -> f64 {
        self.occupation.total_mass()
    }
}

/// Ball on which paths are started: `K` itself for balls, the circumscribed
/// ball for cubes.
pub fn sampling_ball(k: &Domain) -> Result<Domain> {
    if k.space() != Space::Euclidean {
        return Err(Error::SpaceMismatch { expected: "euclidean" });
    }
    if k.dim() < 3 {
        return Err(Error::Hypothesis("interlacements need d >= 3".into()));
    }
    if k.is_ball() {
        Ok(k.clone())
    } else {
        Domain::ball(k.center().to_vec(), k.circumradius(), Space::Euclidean)
    }
}

pub fn truncation_report(k: &Domain, n_drawn: u64, cfg: &PathConfig) -> Result<TruncationReport> {
    let ball = sampling_ball(k)?;
    let d = k.dim() as f64;
    let a = ball.inradius();
    let r_max = cfg.kill_radius(a);
    let q = libm::pow(a / r_max, d - 2.0);
    let per_return = k.volume() / capacity_ball(k.dim(), a)?.value;
    let estimate = n_drawn as f64 * q / (1.0 - q) * per_return;
    let harnack = if r_max > a {
        libm::pow((r_max + a) / (r_max - a), d)
    } else {
        f64::INFINITY
    };
    Ok(TruncationReport {
        r_max,
        return_probability: q,
        neglected_mass_estimate: estimate,
        neglected_mass_bound: estimate * harnack,
    })
}

// Collects in-K atoms, merging up to `stride` consecutive steps.
struct AtomSink<'a> {
    out: Option<&'a mut WeightedAtoms>,
    stride: usize,
    anchor: Vec<f64>,
    acc: f64,
    count: usize,
    mass: f64,
}

impl<'a> AtomSink<'a> {
    fn new(dim: usize, stride: usize, out: Option<&'a mut WeightedAtoms>) -> Self {
        AtomSink {
            out,
            stride,
            anchor: vec![0.0; dim],
            acc: 0.0,
            count: 0,
            mass: 0.0,
        }
    }

    #[inline]
    fn push(&mut self, x: &[f64], h: f64) {
        self.mass += h;
        if self.out.is_none() {
            return;
        }
        if self.count == 0 {
            self.anchor.copy_from_slice(x);
        }
        self.acc += h;
        self.count += 1;
        if self.count == self.stride {
            self.flush();
        }
    }

    fn flush(&mut self) {
        if self.count > 0 {
            if let Some(out) = self.out.as_deref_mut() {
                out.push_unchecked(&self.anchor, self.acc);
            }
            self.acc = 0.0;
            self.count = 0;
        }
    }
}

struct PathRun {
    steps: u64,
    visited: bool,
}

// One path from x0 until it leaves the kill radius. Left-endpoint rule: a
// step starting inside K deposits its duration at its starting point.
fn run_path<N: NoiseSource>(
    x0: &[f64],
    k: &Domain,
    center: &[f64],
    r_max: f64,
    cfg: &PathConfig,
    noise: &mut N,
    sink: &mut AtomSink<'_>,
) -> PathRun {
    let mut x = x0.to_vec();
    let r2 = r_max * r_max;
    let mut steps = 0u64;
    let mut visited = false;
    loop {
        let gap = k.signed_distance(&x);
        let h = cfg.step(gap);
        if gap <= 0.0 {
            visited = true;
            sink.push(&x, h);
        } else {
            sink.flush();
        }
        let s = libm::sqrt(h);
        for v in x.iter_mut() {
            *v += s * noise.standard_normal();
        }
        steps += 1;
        if gap > 0.0 && euclidean_distance_sq(&x, center) > r2 {
            break;
        }
    }
    sink.flush();
    PathRun { steps, visited }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathCount {
    /// `N ~ Poisson(u Cap(sampling ball))`.
    Poisson { u: f64 },
    /// Exactly this many paths started on the sampling sphere.
    Drawn(u64),
    /// Keep starting paths until this many have visited `K`.
    Visiting(u64),
}

struct Accumulated {
    n_paths: u64,
    n_drawn: u64,
    steps: u64,
    mass: f64,
}

fn accumulate(k: &Domain, count: PathCount, cfg: &PathConfig, seed: SeedSpec, out: Option<&mut WeightedAtoms>) -> Result<Accumulated> {
    cfg.validate()?;
    let ball = sampling_ball(k)?;
    let d = k.dim();
    let a = ball.inradius();
    let r_max = cfg.kill_radius(a);
    if r_max <= a {
        return Err(Error::invalid("r_max", "must exceed the sampling radius"));
    }
    let center = ball.center().to_vec();
    let mut sink = AtomSink::new(d, cfg.stride, out);
    let mut x0 = vec![0.0; d];
    let mut acc = Accumulated {
        n_paths: 0,
        n_drawn: 0,
        steps: 0,
        mass: 0.0,
    };
    let mut one = |index: u64, sink: &mut AtomSink<'_>| -> bool {
        let mut rng = seed.child(index).rng();
        sphere_point(&center, a, &mut rng, &mut x0);
        let run = run_path(&x0, k, &center, r_max, cfg, &mut rng, sink);
        acc.steps += run.steps;
        acc.n_drawn += 1;
        if run.visited {
            acc.n_paths += 1;
        }
        run.visited
    };
    match count {
        PathCount::Poisson { u } => {
            if !(u >= 0.0 && u.is_finite()) {
                return Err(Error::invalid("u", "must be finite and nonnegative"));
            }
            let cap = capacity_ball(d, a)?.value;
            // The count has its own stream, disjoint from the path streams.
            let n = poisson(&mut SeedSpec::new(seed.master_seed, seed.stream_id ^ (1 << 63)).rng(), u * cap);
            for i in 0..n {
                one(i, &mut sink);
            }
        }
        PathCount::Drawn(n) => {
            for i in 0..n {
                one(i, &mut sink);
            }
        }
        PathCount::Visiting(n) => {
            let limit = 10_000 * (n + 1);
            let mut i = 0;
            let mut got = 0;
            while got < n {
                if i >= limit {
                    return Err(Error::Degenerate("paths from the sampling sphere keep missing K".into()));
                }
                if one(i, &mut sink) {
                    got += 1;
                }
                i += 1;
            }
        }
    }
    acc.mass = sink.mass;
    Ok(acc)
}

fn build_sample(k: &Domain, intensity: Option<f64>, count: PathCount, cfg: &PathConfig, seed: SeedSpec) -> Result<InterlacementSample> {
    let mut atoms = WeightedAtoms::empty(k.dim(), Space::Euclidean);
    let acc = accumulate(k, count, cfg, seed, Some(&mut atoms))?;
    Ok(InterlacementSample {
        domain: k.clone(),
        intensity,
        n_paths: acc.n_paths,
        n_drawn: acc.n_drawn,
        truncation: truncation_report(k, acc.n_drawn, cfg)?,
        occupation: atoms,
        steps: acc.steps,
    })
}

/// `𝓘_u ↾ K`.
pub fn sample_interlacement(k: &Domain, u: f64, cfg: &PathConfig, seed: SeedSpec) -> Result<InterlacementSample> {
    if !(u > 0.0) {
        return Err(Error::invalid("u", "must be positive"));
    }
    build_sample(k, Some(u), PathCount::Poisson { u }, cfg, seed)
}

/// `𝓘 ↾ K` with the Poisson draw replaced by an explicit path count on the
/// sampling sphere. `sample_interlacement` is this with a Poisson count.
pub fn sample_with_count(k: &Domain, drawn: u64, cfg: &PathConfig, seed: SeedSpec) -> Result<InterlacementSample> {
    build_sample(k, None, PathCount::Drawn(drawn), cfg, seed)
}

/// `n` independent paths with initial law `ẽ_K`, restricted to `K`.
pub fn sample_fixed_n(k: &Domain, n: u64, cfg: &PathConfig, seed: SeedSpec) -> Result<InterlacementSample> {
    build_sample(k, None, PathCount::Visiting(n), cfg, seed)
}

/// Total mass of `𝓘 ↾ K` in `K` without storing atoms. Also returns the
/// number of paths that visited `K`.
pub fn occupation_mass(k: &Domain, count: PathCount, cfg: &PathConfig, seed: SeedSpec) -> Result<(f64, u64)> {
    let acc = accumulate(k, count, cfg, seed, None)?;
    Ok((acc.mass, acc.n_paths))
}

/// Seed of sample `index` on side `side` of a two-sample comparison.
pub fn sample_seed(seed: SeedSpec, side: u64, index: u64) -> SeedSpec {
    seed.child(side).child(index)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub ks: KsResult,
    pub unit_masses: Vec<f64>,
    pub scaled_masses: Vec<f64>,
}

/// One pair for the scaling law `dil_ρ 𝓘_u = ρ^{-2} 𝓘_{u/ρ^{d-2}}`: the mass
/// of `𝓘_u ↾ D_1` (dilation keeps masses) and `ρ^{-2}` times the mass of
/// `𝓘_{u/ρ^{d-2}} ↾ D_ρ`, run with the Brownian-rescaled discretization.
pub fn scaling_pair(u: f64, rho: f64, d: usize, cfg: &PathConfig, seed: SeedSpec, index: u64) -> Result<(f64, f64)> {
    if !(rho > 0.0) {
        return Err(Error::invalid("rho", "must be positive"));
    }
    let unit = Domain::euclidean_ball(d, 1.0)?;
    let big = Domain::euclidean_ball(d, rho)?;
    let (a, _) = occupation_mass(&unit, PathCount::Poisson { u }, cfg, sample_seed(seed, 0, index))?;
    let u_scaled = u / libm::pow(rho, d as f64 - 2.0);
    let (b, _) = occupation_mass(&big, PathCount::Poisson { u: u_scaled }, &cfg.scaled(rho), sample_seed(seed, 1, index))?;
    Ok((a, b / (rho * rho)))
}

pub fn scaling_summary(unit_masses: Vec<f64>, scaled_masses: Vec<f64>) -> Result<ScalingReport> {
    let ks = ks_two_sample(&unit_masses, &scaled_masses)?;
    Ok(ScalingReport {
        ks,
        unit_masses,
        scaled_masses,
    })
}

pub fn check_scaling_law(u: f64, rho: f64, d: usize, replicas: u64, cfg: &PathConfig, seed: SeedSpec) -> Result<ScalingReport> {
    let mut a = Vec::with_capacity(replicas as usize);
    let mut b = Vec::with_capacity(replicas as usize);
    for i in 0..replicas {
        let (x, y) = scaling_pair(u, rho, d, cfg, seed, i)?;
        a.push(x);
        b.push(y);
    }
    scaling_summary(a, b)
}

/// Masses of `𝓘_u` in `D_r(x_j)` for several centers, each from its own
/// independent samples of `𝓘_u ↾ D_R(0)` restricted to the small ball. Returns
/// the pairwise KS tests.
pub fn check_translation(
    u: f64,
    radius: f64,
    centers: &[Vec<f64>],
    outer_radius: f64,
    replicas: u64,
    cfg: &PathConfig,
    seed: SeedSpec,
) -> Result<Vec<KsResult>> {
    if centers.len() < 2 {
        return Err(Error::invalid("centers", "need at least two centers"));
    }
    let d = centers[0].len();
    let outer = Domain::euclidean_ball(d, outer_radius)?;
    let mut groups = Vec::new();
    for (j, c) in centers.iter().enumerate() {
        let small = Domain::ball(c.clone(), radius, Space::Euclidean)?;
        let offset = libm::sqrt(euclidean_distance_sq(c, outer.center()));
        if offset + radius > outer_radius {
            return Err(Error::invalid("centers", "small balls must lie in the outer ball"));
        }
        let mut masses = Vec::with_capacity(replicas as usize);
        for i in 0..replicas {
            let s = sample_interlacement(&outer, u, cfg, sample_seed(seed, j as u64, i))?;
            let restricted = crate::geometry::restrict_measure(&s.occupation, &small)?;
            masses.push(restricted.total_mass());
        }
        groups.push(masses);
    }
    let mut out = Vec::new();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            out.push(ks_two_sample(&groups[i], &groups[j])?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub q: f64,
    pub slope: f64,
    pub slope_se: f64,
    pub ci95: (f64, f64),
    /// `(diam, ‖X - E X‖_q)` per group.
    pub points: Vec<(f64, f64)>,
    /// Slope of `½ log Var` from the unbiased variance estimator.
    pub variance_slope: f64,
}

/// Log-log fit of the central `q`-th moment norm of `𝓘(A)` against
/// `diam(A)`. `groups` holds `(diam(A), samples of 𝓘(A))`.
pub fn occupation_moment_report(groups: &[(f64, Vec<f64>)], q: f64) -> Result<MomentReport> {
    if !(q >= 2.0) {
        return Err(Error::invalid("q", "must be at least 2"));
    }
    if groups.len() < 3 {
        return Err(Error::Degenerate("need at least three diameters".into()));
    }
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    let mut lv = Vec::new();
    let mut points = Vec::new();
    for (diam, xs) in groups {
        if xs.len() < 2 {
            return Err(Error::Degenerate("each diameter needs at least two samples".into()));
        }
        if !(*diam > 0.0) {
            return Err(Error::invalid("diam", "must be positive"));
        }
        let stats: RunningStats = xs.iter().copied().collect();
        let m = stats.mean();
        let moment = xs.iter().map(|x| libm::pow((x - m).abs(), q)).sum::<f64>() / xs.len() as f64;
        let norm = libm::pow(moment, 1.0 / q);
        if !(norm > 0.0) {
            return Err(Error::Degenerate("samples have no spread".into()));
        }
        lx.push(libm::log(*diam));
        ly.push(libm::log(norm));
        lv.push(0.5 * libm::log(stats.variance()));
        points.push((*diam, norm));
    }
    let fit = linear_regression(&lx, &ly)?;
    let vfit = linear_regression(&lx, &lv)?;
    Ok(MomentReport {
        q,
        slope: fit.slope,
        slope_se: fit.slope_se,
        ci95: fit.slope_ci95(),
        points,
        variance_slope: vfit.slope,
    })
}

/// Rotation in the plane spanned by two directions, mapping the first onto
/// the second and fixing the orthogonal complement. Built as the product of
/// the reflections across `(a + b)^⊥` and then `b^⊥`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneRotation {
    first: Vec<f64>,
    second: Vec<f64>,
    identity: bool,
}

fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    if n > 0.0 && n.is_finite() {
        Some(v.iter().map(|x| x / n).collect())
    } else {
        None
    }
}

impl PlaneRotation {
    pub fn new(from: &[f64], to: &[f64]) -> Result<Self> {
        if from.len() != to.len() {
            return Err(Error::DimensionMismatch {
                expected: from.len(),
                found: to.len(),
            });
        }
        let a = normalized(from).ok_or_else(|| Error::invalid("from", "must be nonzero"))?;
        let b = normalized(to).ok_or_else(|| Error::invalid("to", "must be nonzero"))?;
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let diff2: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        if diff2 < 1e-30 {
            return Ok(PlaneRotation {
                first: a,
                second: b,
                identity: true,
            });
        }
        let first = match normalized(&sum) {
            Some(s) if sum.iter().map(|x| x * x).sum::<f64>() > 1e-20 => s,
            _ => {
                // Antipodal: any direction orthogonal to a gives a half-turn.
                let mut e = vec![0.0; a.len()];
                let k = (0..a.len()).min_by(|&i, &j| a[i].abs().total_cmp(&a[j].abs())).unwrap_or(0);
                e[k] = 1.0;
                let dot: f64 = e.iter().zip(&a).map(|(x, y)| x * y).sum();
                let perp: Vec<f64> = e.iter().zip(&a).map(|(x, y)| x - dot * y).collect();
                let p = normalized(&perp).ok_or_else(|| Error::Degenerate("one-dimensional antipodal rotation".into()))?;
                // p ⊥ a, so reflecting across p^⊥ fixes a and across b^⊥
                // sends it to b: the half-turn in span{a, p}.
                return Ok(PlaneRotation {
                    first: p,
                    second: b,
                    identity: false,
                });
            }
        };
        Ok(PlaneRotation {
            first,
            second: b,
            identity: false,
        })
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
        if self.identity {
            return;
        }
        for w in [&self.first, &self.second] {
            let dot: f64 = out.iter().zip(w.iter()).map(|(p, q)| p * q).sum();
            for (o, q) in out.iter_mut().zip(w.iter()) {
                *o -= 2.0 * dot * q;
            }
        }
    }
}

/// Coupling of two starts on the unit sphere by a rotation: the rotated copy
/// of a path stays within `|B_0 - B̃_0|` of the original while inside `D_1`.
/// Returns the largest excess of `|B̃_t - B_t|` over `|B_0 - B̃_0|` along the
/// path positions with `|B_t| ≤ 1` (nonpositive when the bound holds).
pub fn rotation_coupling_excess(positions: &[f64], dim: usize, target_start: &[f64]) -> Result<f64> {
    if dim == 0 || positions.len() < dim || !positions.len().is_multiple_of(dim) {
        return Err(Error::invalid("positions", "must hold whole points"));
    }
    let start = &positions[..dim];
    let rot = PlaneRotation::new(start, target_start)?;
    let mut image = vec![0.0; dim];
    rot.apply(start, &mut image);
    let bound = libm::sqrt(euclidean_distance_sq(start, &image));
    let mut worst = f64::NEG_INFINITY;
    for x in positions.chunks_exact(dim) {
        if x.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            rot.apply(x, &mut image);
            let gap = libm::sqrt(euclidean_distance_sq(x, &image));
            worst = worst.max(gap - bound);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brownian::sample_bm_path;
    use core::f64::consts::PI;

    fn cfg() -> PathConfig {
        PathConfig {
            dt_in: 4e-3,
            resolution: 4.0,
            dt_max: f64::INFINITY,
            r_max: Some(30.0),
            stride: 1,
        }
    }

    #[test]
    fn atoms_stay_inside() {
        let k = Domain::euclidean_cube(3, 1.0).unwrap();
        let s = sample_interlacement(&k, 2.0, &cfg(), SeedSpec::new(1, 0)).unwrap();
        assert!(s.occupation.iter().all(|(x, _)| k.contains(x)));
        assert!(s.n_paths <= s.n_drawn);
        let (m, n) = occupation_mass(&k, PathCount::Poisson { u: 2.0 }, &cfg(), SeedSpec::new(1, 0)).unwrap();
        assert!((m - s.mass()).abs() < 1e-9);
        assert_eq!(n, s.n_paths);
    }

    #[test]
    fn zero_paths_is_empty() {
        let k = Domain::euclidean_ball(3, 1.0).unwrap();
        let s = sample_fixed_n(&k, 0, &cfg(), SeedSpec::new(1, 0)).unwrap();
        assert!(s.occupation.is_empty());
        assert_eq!(s.mass(), 0.0);
        let s = sample_with_count(&k, 0, &cfg(), SeedSpec::new(1, 0)).unwrap();
        assert_eq!(s.n_paths, 0);
    }

    #[test]
    fn stride_keeps_mass() {
        let k = Domain::euclidean_ball(3, 1.0).unwrap();
        let a = sample_fixed_n(&k, 5, &cfg(), SeedSpec::new(2, 0)).unwrap();
        let mut c = cfg();
        c.stride = 10;
        let b = sample_fixed_n(&k, 5, &c, SeedSpec::new(2, 0)).unwrap();
        assert!((a.mass() - b.mass()).abs() < 1e-9);
        assert!(b.occupation.len() * 5 < a.occupation.len());
    }

    #[test]
    fn fixed_n_mean_mass_per_path() {
        // Each path started from ẽ_{D_1} spends |D_1|/Cap(D_1) = 2/3 in D_1 on average.
        let k = Domain::euclidean_ball(3, 1.0).unwrap();
        let mut st = RunningStats::new();
        for i in 0..400 {
            let (m, _) = occupation_mass(&k, PathCount::Visiting(1), &cfg(), SeedSpec::new(3, i)).unwrap();
            st.push(m);
        }
        let tr = truncation_report(&k, 1, &cfg()).unwrap();
        assert!((st.mean() - 2.0 / 3.0).abs() < 3.0 * st.se() + tr.neglected_mass_bound + 0.02, "{}", st.mean());
    }

    #[test]
    fn truncation_numbers() {
        let k = Domain::euclidean_ball(3, 1.0).unwrap();
        let tr = truncation_report(&k, 10, &PathConfig::new(1e-3)).unwrap();
        assert_eq!(tr.r_max, 50.0);
        assert!((tr.return_probability - 0.02).abs() < 1e-15);
        let expected = 10.0 * 0.02 / 0.98 * (4.0 * PI / 3.0) / (2.0 * PI);
        assert!((tr.neglected_mass_estimate - expected).abs() < 1e-12);
        assert!(tr.neglected_mass_bound > tr.neglected_mass_estimate);
    }

    #[test]
    fn rotation_maps_and_preserves_norms() {
        let a = [1.0, 0.0, 0.0];
        for b in [[0.0, 1.0, 0.0], [0.6, 0.8, 0.0], [-1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.6, -0.8]] {
            let r = PlaneRotation::new(&a, &b).unwrap();
            let mut out = [0.0; 3];
            r.apply(&a, &mut out);
            for k in 0..3 {
                assert!((out[k] - b[k]).abs() < 1e-12, "{b:?} -> {out:?}");
            }
            let x = [0.3, -0.4, 0.7];
            r.apply(&x, &mut out);
            let n1: f64 = x.iter().map(|v| v * v).sum();
            let n2: f64 = out.iter().map(|v| v * v).sum();
            assert!((n1 - n2).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_coupling_stays_close() {
        let mut rng = SeedSpec::new(8, 0).rng();
        for i in 0..40 {
            let mut start = [0.0; 3];
            sphere_point(&[0.0; 3], 1.0, &mut rng, &mut start);
            let mut target = [0.0; 3];
            sphere_point(&[0.0; 3], 1.0, &mut rng, &mut target);
            let path = sample_bm_path(&start, 1.0, 1e-3, Space::Euclidean, SeedSpec::new(8, i + 1)).unwrap();
            let excess = rotation_coupling_excess(path.positions(), 3, &target).unwrap();
            assert!(excess <= 1e-9, "{excess}");
        }
    }

    #[test]
    fn moment_report_needs_three_groups() {
        assert!(occupation_moment_report(&[(1.0, vec![1.0, 2.0]), (2.0, vec![1.0, 3.0])], 2.0).is_err());
        assert!(occupation_moment_report(&[(1.0, vec![1.0]), (2.0, vec![1.0, 3.0]), (4.0, vec![0.0, 5.0])], 2.0).is_err());
        let groups: Vec<(f64, Vec<f64>)> = [1.0, 2.0, 4.0, 8.0]
            .iter()
            .map(|&dm| (dm, (0..50).map(|i| dm * dm * libm::sin(i as f64)).collect()))
            .collect();
        let r = occupation_moment_report(&groups, 2.0).unwrap();
        assert!((r.slope - 2.0).abs() < 1e-9);
        assert!((r.variance_slope - 2.0).abs() < 1e-9);
    }
}
