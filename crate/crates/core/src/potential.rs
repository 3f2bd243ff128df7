//! Green function, Newtonian capacities, equilibrium measures and hitting
//! laws, in closed form where one exists and by Monte Carlo otherwise.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::brownian::{first_exit, first_hit, uniform_torus_point, ExitOptions, ExitOutcome, HitOptions, Stepping};
use crate::error::{Error, Result};
use crate::geometry::{displacement, Domain, Space};
use crate::rng::{NoiseSource, SeedSpec};
use crate::special;
use crate::stats::{ks_one_sample, sphere_coordinate_cdf, KsResult};

fn check_transient(d: usize) -> Result<()> {
    if d < 3 {
        Err(Error::Hypothesis(alloc::format!(
            "dimension {d} is recurrent; capacities need d >= 3"
        )))
    } else {
        Ok(())
    }
}

/// `c(d) = Γ(d/2 - 1) / (2 π^{d/2})`, the Green function of ½Δ at unit
/// distance: `g(x, y) = c(d) |x - y|^{2-d}`.
pub fn green_constant(d: usize) -> Result<f64> {
    check_transient(d)?;
    let h = d as f64 / 2.0;
    Ok(special::gamma(h - 1.0) / (2.0 * libm::pow(PI, h)))
}

pub fn green_function(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    let d = x.len();
    let c = green_constant(d)?;
    let r = libm::sqrt(crate::geometry::euclidean_distance_sq(x, y));
    Ok(c * libm::pow(r, 2.0 - d as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CapacityMethod {
    ClosedForm,
    SweepingEstimate { ci_halfwidth: f64, replicas: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacityValue {
    pub value: f64,
    pub method: CapacityMethod,
}

/// `Cap(D_r) = r^{d-2} / c(d)`: the equilibrium potential of the uniform
/// measure on the sphere equals 1 at the center.
pub fn capacity_ball(d: usize, r: f64) -> Result<CapacityValue> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::invalid("r", "must be positive and finite"));
    }
    let c = green_constant(d)?;
    Ok(CapacityValue {
        value: libm::pow(r, d as f64 - 2.0) / c,
        method: CapacityMethod::ClosedForm,
    })
}

/// `Cap(D_1)` in dimension `d`.
pub fn unit_ball_capacity(d: usize) -> Result<f64> {
    Ok(capacity_ball(d, 1.0)?.value)
}

/// Uniform point on the sphere bounding a Euclidean ball.
pub fn sample_equilibrium_ball<N: NoiseSource>(ball: &Domain, noise: &mut N) -> Result<Vec<f64>> {
    if !ball.is_ball() || ball.space() != Space::Euclidean {
        return Err(Error::invalid("ball", "must be a Euclidean ball"));
    }
    let d = ball.dim();
    let r = ball.inradius();
    let mut out = vec![0.0; d];
    sphere_point(ball.center(), r, noise, &mut out);
    Ok(out)
}

/// Uniform point on the sphere of radius `r` around `center`, into `out`.
pub(crate) fn sphere_point<N: NoiseSource>(center: &[f64], r: f64, noise: &mut N, out: &mut [f64]) {
    loop {
        let mut n2 = 0.0;
        for v in out.iter_mut() {
            *v = noise.standard_normal();
            n2 += *v * *v;
        }
        if n2 > 1e-300 {
            let s = r / libm::sqrt(n2);
            for (v, c) in out.iter_mut().zip(center) {
                *v = c + *v * s;
            }
            return;
        }
    }
}

/// Settings for "τ < ∞" simulations on ℝᵈ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EscapeOptions {
    pub stepping: Stepping,
    pub bridge_correction: bool,
    pub r_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepingEstimate {
    pub capacity: CapacityValue,
    pub hit_fraction: f64,
    pub hit_fraction_se: f64,
    /// Entrance points of the paths that hit `K`; approximately distributed
    /// as the normalized equilibrium measure of `K`.
    pub hit_points: Vec<Vec<f64>>,
    /// Bound on the hit fraction lost by killing paths at `r_max`.
    pub truncation_bound: f64,
    pub replicas: u64,
}

fn check_enclosed(k: &Domain, enclosing: &Domain) -> Result<()> {
    if !enclosing.is_ball() || enclosing.space() != Space::Euclidean || k.space() != Space::Euclidean {
        return Err(Error::invalid("enclosing", "must be a Euclidean ball around a Euclidean domain"));
    }
    if k.dim() != enclosing.dim() {
        return Err(Error::DimensionMismatch {
            expected: enclosing.dim(),
            found: k.dim(),
        });
    }
    let offset = libm::sqrt(crate::geometry::euclidean_distance_sq(k.center(), enclosing.center()));
    if offset + k.circumradius() > enclosing.inradius() * (1.0 + 1e-12) {
        return Err(Error::invalid("K", "must be contained in the enclosing ball"));
    }
    Ok(())
}

/// One sweeping trial: start uniform on the enclosing sphere and return the
/// entrance point in `K`, if any before escaping `r_max`.
pub fn sweep_once<N: NoiseSource>(k: &Domain, enclosing: &Domain, opts: &EscapeOptions, noise: &mut N) -> Result<Option<Vec<f64>>> {
    let x0 = sample_equilibrium_ball(enclosing, noise)?;
    let hit_opts = HitOptions {
        t_max: f64::INFINITY,
        stepping: opts.stepping,
        bridge_correction: opts.bridge_correction,
        escape_radius: Some(opts.r_max),
    };
    let out = first_hit(&x0, k, &hit_opts, noise)?;
    Ok(out.hit.map(|h| h.point))
}

/// `Cap(K) ≈ P_{ẽ_B}(τ_K < ∞) · Cap(B)` for `K ⊆ B`.
pub fn estimate_capacity_sweeping(
    k: &Domain,
    enclosing: &Domain,
    replicas: u64,
    opts: &EscapeOptions,
    seed: SeedSpec,
) -> Result<SweepingEstimate> {
    check_enclosed(k, enclosing)?;
    if replicas == 0 {
        return Err(Error::invalid("replicas", "must be positive"));
    }
    let mut hit_points = Vec::new();
    for r in 0..replicas {
        let mut rng = seed.child(r).rng();
        if let Some(p) = sweep_once(k, enclosing, opts, &mut rng)? {
            hit_points.push(p);
        }
    }
    sweeping_summary(k, enclosing, replicas, hit_points, opts.r_max)
}

/// Assemble a [`SweepingEstimate`] from trials run elsewhere.
pub fn sweeping_summary(
    k: &Domain,
    enclosing: &Domain,
    replicas: u64,
    hit_points: Vec<Vec<f64>>,
    r_max: f64,
) -> Result<SweepingEstimate> {
    check_enclosed(k, enclosing)?;
    let d = k.dim();
    let cap_ball = capacity_ball(d, enclosing.inradius())?.value;
    let n = replicas as f64;
    let f = hit_points.len() as f64 / n;
    let se = libm::sqrt((f * (1.0 - f)).max(0.0) / n);
    if hit_points.is_empty() {
        return Err(Error::Degenerate("no sweeping path hit the set".into()));
    }
    Ok(SweepingEstimate {
        capacity: CapacityValue {
            value: f * cap_ball,
            method: CapacityMethod::SweepingEstimate {
                ci_halfwidth: 1.96 * se * cap_ball,
                replicas,
            },
        },
        hit_fraction: f,
        hit_fraction_se: se,
        hit_points,
        truncation_bound: libm::pow(enclosing.inradius() / r_max, d as f64 - 2.0),
        replicas,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HittingPrediction {
    pub probability: f64,
    /// Magnitude of the neglected terms,
    /// `(ρ-σ) ρ ℓ^{2(d-2)} |log ℓ| + ℓ^d`.
    pub error_term: f64,
    /// False when `ρ ℓ^{d-2}` is not small or `ℓ` is not small, so the
    /// leading-order law should not be trusted.
    pub regime_ok: bool,
}

/// Leading-order `P(σ < τ_{D_ℓ} ≤ ρ) ≈ (ρ - σ) ℓ^{d-2} Cap(D_1)` for a
/// stationary Brownian motion on the torus.
pub fn torus_hitting_prediction(l: f64, rho: f64, sigma: f64, d: usize) -> Result<HittingPrediction> {
    check_transient(d)?;
    if !(l > 0.0 && l < 0.5) {
        return Err(Error::invalid("l", "need 0 < l < 1/2"));
    }
    if !(sigma >= 0.0 && sigma <= rho && rho.is_finite()) {
        return Err(Error::invalid("sigma", "need 0 <= sigma <= rho < inf"));
    }
    let cap1 = unit_ball_capacity(d)?;
    let ld2 = libm::pow(l, d as f64 - 2.0);
    let probability = (rho - sigma) * ld2 * cap1;
    let error_term = (rho - sigma) * rho * ld2 * ld2 * libm::log(l).abs() + libm::pow(l, d as f64);
    let regime_ok = rho * ld2 * cap1 <= 0.5 && l <= 0.1;
    Ok(HittingPrediction {
        probability,
        error_term,
        regime_ok,
    })
}

/// What one stationary torus path did with respect to `D_ℓ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusHitTrial {
    pub hit_time: Option<f64>,
    /// First coordinate of the unit vector from the ball's center to the hit
    /// point.
    pub angular_coordinate: Option<f64>,
}

/// Stationary start, run to the first entrance of `D_ℓ(0)` before time `ρ`.
pub fn torus_hit_once<N: NoiseSource>(
    l: f64,
    rho: f64,
    d: usize,
    stepping: Stepping,
    bridge_correction: bool,
    noise: &mut N,
) -> Result<TorusHitTrial> {
    let ball = Domain::ball(vec![0.0; d], l, Space::Torus)?;
    let x0 = uniform_torus_point(d, noise);
    let opts = HitOptions {
        t_max: rho,
        stepping,
        bridge_correction,
        escape_radius: None,
    };
    let out = first_hit(&x0, &ball, &opts, noise)?;
    Ok(match out.hit {
        Some(h) => {
            let mut disp = vec![0.0; d];
            displacement(Space::Torus, &h.point, ball.center(), &mut disp);
            let norm = libm::sqrt(disp.iter().map(|v| v * v).sum::<f64>());
            TorusHitTrial {
                hit_time: Some(h.time),
                angular_coordinate: Some(if norm > 0.0 { disp[0] / norm } else { 0.0 }),
            }
        }
        None => TorusHitTrial {
            hit_time: None,
            angular_coordinate: None,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TorusHittingReport {
    pub empirical_probability: f64,
    pub standard_error: f64,
    pub ci95: (f64, f64),
    pub prediction: HittingPrediction,
    pub hits: u64,
    pub replicas: u64,
    /// KS test of the hit-point angular coordinate against the uniform
    /// sphere law; `None` with fewer than two hits.
    pub angular_ks: Option<KsResult>,
}

/// Summarize trials into the `P(σ < τ ≤ ρ)` estimate and the angular test.
pub fn torus_hitting_summary(trials: &[TorusHitTrial], l: f64, rho: f64, sigma: f64, d: usize) -> Result<TorusHittingReport> {
    let prediction = torus_hitting_prediction(l, rho, sigma, d)?;
    let n = trials.len() as u64;
    if n == 0 {
        return Err(Error::invalid("replicas", "must be positive"));
    }
    let mut hits = 0u64;
    let mut angles = Vec::new();
    for t in trials {
        if let Some(time) = t.hit_time {
            if time > sigma && time <= rho {
                hits += 1;
                if let Some(a) = t.angular_coordinate {
                    angles.push(a);
                }
            }
        }
    }
    let p = hits as f64 / n as f64;
    let se = libm::sqrt(p * (1.0 - p) / n as f64);
    let angular_ks = if angles.len() >= 2 {
        Some(ks_one_sample(&angles, |x| sphere_coordinate_cdf(d, x))?)
    } else {
        None
    };
    Ok(TorusHittingReport {
        empirical_probability: p,
        standard_error: se,
        ci95: (p - 1.96 * se, p + 1.96 * se),
        prediction,
        hits,
        replicas: n,
        angular_ks,
    })
}

/// Monte Carlo estimate of `P(σ < τ_{D_ℓ} ≤ ρ)` for a stationary start.
pub fn validate_torus_hitting(
    l: f64,
    rho: f64,
    sigma: f64,
    d: usize,
    replicas: u64,
    stepping: Stepping,
    seed: SeedSpec,
) -> Result<TorusHittingReport> {
    torus_hitting_prediction(l, rho, sigma, d)?;
    let mut trials = Vec::with_capacity(replicas as usize);
    for r in 0..replicas {
        let mut rng = seed.child(r).rng();
        trials.push(torus_hit_once(l, rho, d, stepping, true, &mut rng)?);
    }
    torus_hitting_summary(&trials, l, rho, sigma, d)
}

/// Number of completed entrances into `D_ℓ` within `[0, ρ]`, where entrance
/// `k+1` only counts after the path has left `D_L` following entrance `k`.
pub fn count_iterated_hits<N: NoiseSource>(
    l: f64,
    big_l: f64,
    rho: f64,
    d: usize,
    k_max: usize,
    stepping: Stepping,
    noise: &mut N,
) -> Result<usize> {
    if !(0.0 < l && l < big_l && big_l < 0.5) {
        return Err(Error::invalid("l", "need 0 < l < L < 1/2"));
    }
    let small = Domain::ball(vec![0.0; d], l, Space::Torus)?;
    let big = Domain::ball(vec![0.0; d], big_l, Space::Torus)?;
    let mut x = uniform_torus_point(d, noise);
    let mut t = 0.0;
    let mut count = 0;
    while count < k_max && t < rho {
        let hit = first_hit(
            &x,
            &small,
            &HitOptions {
                t_max: rho - t,
                stepping,
                bridge_correction: true,
                escape_radius: None,
            },
            noise,
        )?;
        let Some(h) = hit.hit else { break };
        // Starting inside D_ℓ is not an entrance at a positive time.
        if !(count == 0 && h.time == 0.0) {
            count += 1;
        }
        t += h.time;
        if count >= k_max || t >= rho {
            break;
        }
        let exit = first_exit(
            &h.point,
            &big,
            &ExitOptions {
                t_max: rho - t,
                stepping,
                bridge_correction: true,
            },
            noise,
        )?;
        match exit {
            ExitOutcome::Exited { time, point, .. } => {
                t += time;
                x = point;
            }
            ExitOutcome::Censored { .. } => break,
        }
    }
    Ok(count)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyEstimate {
    pub k: usize,
    pub frequency: f64,
    pub standard_error: f64,
}

/// Turn per-path iterated-hit counts into `P(τ_{k,ℓ} ≤ ρ)` for `k = 1..=k_max`.
pub fn iterated_hit_summary(counts: &[usize], k_max: usize) -> Vec<FrequencyEstimate> {
    let n = counts.len().max(1) as f64;
    (1..=k_max)
        .map(|k| {
            let f = counts.iter().filter(|&&c| c >= k).count() as f64 / n;
            FrequencyEstimate {
                k,
                frequency: f,
                standard_error: libm::sqrt(f * (1.0 - f) / n),
            }
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn iterated_hit_frequencies(
    l: f64,
    big_l: f64,
    rho: f64,
    d: usize,
    k_max: usize,
    replicas: u64,
    stepping: Stepping,
    seed: SeedSpec,
) -> Result<Vec<FrequencyEstimate>> {
    let mut counts = Vec::with_capacity(replicas as usize);
    for r in 0..replicas {
        let mut rng = seed.child(r).rng();
        counts.push(count_iterated_hits(l, big_l, rho, d, k_max, stepping, &mut rng)?);
    }
    Ok(iterated_hit_summary(&counts, k_max))
}
