//! Log-domain Sinkhorn with ε-scaling.
//!
//! Both measures are normalized to probability vectors `a`, `b` and the
//! regularization is `ε·KL(P | a⊗b)`, so the plan is
//! `P_ij = a_i b_j exp((f_i + g_j - C_ij)/ε)` and the entropic value at a
//! fixed point is `⟨f, a⟩ + ⟨g, b⟩`. Costs are multiplied back by the total
//! mass at the end since `W^p(mμ, mλ) = m·W^p(μ, λ)`.

use alloc::vec;
use alloc::vec::Vec;

use super::{ground_cost, nonzero_indices, SolveReport, SolverKind, TransportPlan, TransportProblem};
use crate::error::{Error, Result};
use crate::geometry::WeightedAtoms;
use crate::stats::median;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropicOptions {
    /// First ε as a multiple of the median ground cost.
    pub start_ratio: f64,
    /// Last ε as a multiple of the median ground cost.
    pub final_ratio: f64,
    /// Geometric stages from start to final, inclusive.
    pub stages: usize,
    /// Iteration budget shared by all stages.
    pub max_iter: u64,
    /// L1 tolerance on the row marginal of the normalized plan.
    pub tol: f64,
    pub debias: bool,
}

impl Default for EntropicOptions {
    fn default() -> Self {
        EntropicOptions {
            start_ratio: 1.0,
            final_ratio: 1e-3,
            stages: 8,
            max_iter: 200_000,
            tol: 1e-9,
            debias: false,
        }
    }
}

impl EntropicOptions {
    fn validate(&self) -> Result<()> {
        if !(self.final_ratio > 0.0 && self.final_ratio.is_finite()) {
            return Err(Error::invalid("final_ratio", "must be positive"));
        }
        if self.stages == 0 {
            return Err(Error::invalid("stages", "need at least one stage"));
        }
        if self.stages > 1 && !(self.start_ratio > self.final_ratio && self.start_ratio.is_finite()) {
            return Err(Error::invalid("start_ratio", "schedule must be strictly decreasing"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol", "must be positive"));
        }
        Ok(())
    }

    /// The ε values in cost units for a given cost scale.
    pub fn schedule(&self, scale: f64) -> Vec<f64> {
        if self.stages == 1 {
            return vec![self.final_ratio * scale];
        }
        let k = (self.stages - 1) as f64;
        let q = libm::log(self.final_ratio / self.start_ratio) / k;
        (0..self.stages)
            .map(|s| scale * self.start_ratio * libm::exp(q * s as f64))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageCost {
    pub epsilon: f64,
    /// `⟨P_ε, C⟩` at the end of the stage.
    pub cost: f64,
    pub iterations: u64,
    pub marginal_violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropicResult {
    /// Rounded plan; exactly feasible up to floating point.
    pub plan: TransportPlan,
    pub report: SolveReport,
    pub stages: Vec<StageCost>,
    /// `W^p ≥ lower_bound` from c-transformed dual potentials.
    pub lower_bound: f64,
    /// Cost of the rounded plan, hence `W^p ≤ upper_bound`.
    pub upper_bound: f64,
    /// Sinkhorn divergence at the final ε, when requested.
    pub debiased: Option<f64>,
}

struct Dense {
    n: usize,
    m: usize,
    cost: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Dense {
    fn build(src: &WeightedAtoms, rows: &[usize], tgt: &WeightedAtoms, cols: &[usize], problem: &TransportProblem) -> Dense {
        let (n, m) = (rows.len(), cols.len());
        let mut cost = vec![0.0; n * m];
        for (r, &i) in rows.iter().enumerate() {
            let x = src.position(i);
            for (c, &j) in cols.iter().enumerate() {
                cost[r * m + c] = ground_cost(problem.metric(), x, tgt.position(j), problem.p());
            }
        }
        let ms: f64 = rows.iter().map(|&i| src.mass(i)).sum();
        let mt: f64 = cols.iter().map(|&j| tgt.mass(j)).sum();
        Dense {
            n,
            m,
            cost,
            a: rows.iter().map(|&i| src.mass(i) / ms).collect(),
            b: cols.iter().map(|&j| tgt.mass(j) / mt).collect(),
        }
    }
}

struct Potentials {
    f: Vec<f64>,
    g: Vec<f64>,
}

struct Sinkhorn<'a> {
    k: &'a Dense,
    log_a: Vec<f64>,
    log_b: Vec<f64>,
    pot: Potentials,
    scratch: Vec<f64>,
}

impl<'a> Sinkhorn<'a> {
    fn new(k: &'a Dense) -> Self {
        Sinkhorn {
            k,
            log_a: k.a.iter().map(|&x| libm::log(x)).collect(),
            log_b: k.b.iter().map(|&x| libm::log(x)).collect(),
            pot: Potentials {
                f: vec![0.0; k.n],
                g: vec![0.0; k.m],
            },
            scratch: vec![0.0; k.n.max(k.m)],
        }
    }

    fn update_f(&mut self, eps: f64) {
        let (n, m) = (self.k.n, self.k.m);
        for i in 0..n {
            let row = &self.k.cost[i * m..(i + 1) * m];
            let mut hi = f64::NEG_INFINITY;
            for j in 0..m {
                let v = self.log_b[j] + (self.pot.g[j] - row[j]) / eps;
                self.scratch[j] = v;
                hi = hi.max(v);
            }
            let s: f64 = self.scratch[..m].iter().map(|&v| libm::exp(v - hi)).sum();
            self.pot.f[i] = -eps * (hi + libm::log(s));
        }
    }

    fn update_g(&mut self, eps: f64) {
        let (n, m) = (self.k.n, self.k.m);
        let mut hi = vec![f64::NEG_INFINITY; m];
        for i in 0..n {
            let row = &self.k.cost[i * m..(i + 1) * m];
            let base = self.log_a[i] + self.pot.f[i] / eps;
            for j in 0..m {
                hi[j] = hi[j].max(base - row[j] / eps);
            }
        }
        let mut sum = vec![0.0; m];
        for i in 0..n {
            let row = &self.k.cost[i * m..(i + 1) * m];
            let base = self.log_a[i] + self.pot.f[i] / eps;
            for j in 0..m {
                sum[j] += libm::exp(base - row[j] / eps - hi[j]);
            }
        }
        for j in 0..m {
            self.pot.g[j] = -eps * (hi[j] + libm::log(sum[j]));
        }
    }

    #[inline]
    fn entry(&self, i: usize, j: usize, eps: f64) -> f64 {
        let c = self.k.cost[i * self.k.m + j];
        self.k.a[i] * self.k.b[j] * libm::exp((self.pot.f[i] + self.pot.g[j] - c) / eps)
    }

    /// Row marginal L1 error and `⟨P, C⟩`, right after a `g` update.
    fn status(&self, eps: f64) -> (f64, f64) {
        let mut viol = 0.0;
        let mut cost = 0.0;
        for i in 0..self.k.n {
            let mut r = 0.0;
            for j in 0..self.k.m {
                let p = self.entry(i, j, eps);
                r += p;
                cost += p * self.k.cost[i * self.k.m + j];
            }
            viol += (r - self.k.a[i]).abs();
        }
        (viol, cost)
    }

    fn dual_value(&self) -> f64 {
        let fa: f64 = self.pot.f.iter().zip(&self.k.a).map(|(f, a)| f * a).sum();
        let gb: f64 = self.pot.g.iter().zip(&self.k.b).map(|(g, b)| g * b).sum();
        fa + gb
    }

    /// Dense plan, scaled so its column marginal is `b` exactly after a `g`
    /// update.
    fn plan(&self, eps: f64) -> Vec<f64> {
        let mut p = vec![0.0; self.k.n * self.k.m];
        for i in 0..self.k.n {
            for j in 0..self.k.m {
                p[i * self.k.m + j] = self.entry(i, j, eps);
            }
        }
        p
    }
}

struct Annealed {
    stages: Vec<StageCost>,
    iterations: u64,
    converged: bool,
    violation: f64,
    cost: f64,
    dual: f64,
    eps: f64,
}

fn anneal(s: &mut Sinkhorn<'_>, schedule: &[f64], opts: &EntropicOptions) -> Annealed {
    let mut stages = Vec::with_capacity(schedule.len());
    let mut total = 0u64;
    let mut converged = false;
    let (mut viol, mut cost) = (f64::INFINITY, f64::INFINITY);
    for &eps in schedule {
        if total >= opts.max_iter {
            break;
        }
        let mut it = 0u64;
        converged = false;
        while total < opts.max_iter {
            s.update_f(eps);
            s.update_g(eps);
            it += 1;
            total += 1;
            // The status pass costs as much as an iteration; check sparsely
            // once the first few iterations are done.
            if it <= 10 || it.is_multiple_of(10) {
                let (v, c) = s.status(eps);
                viol = v;
                cost = c;
                if v <= opts.tol {
                    converged = true;
                    break;
                }
            }
        }
        if !converged {
            let (v, c) = s.status(eps);
            viol = v;
            cost = c;
            converged = v <= opts.tol;
        }
        stages.push(StageCost {
            epsilon: eps,
            cost,
            iterations: it,
            marginal_violation: viol,
        });
    }
    let eps = stages.last().map_or(schedule[0], |s: &StageCost| s.epsilon);
    Annealed {
        stages,
        iterations: total,
        converged,
        violation: viol,
        cost,
        dual: s.dual_value(),
        eps,
    }
}

/// Projects a nearly feasible plan onto the transportation polytope
/// (Altschuler, Weed and Rigollet, 2017).
fn round_plan(p: &mut [f64], a: &[f64], b: &[f64]) {
    let (n, m) = (a.len(), b.len());
    for i in 0..n {
        let r: f64 = p[i * m..(i + 1) * m].iter().sum();
        if r > a[i] {
            let s = a[i] / r;
            p[i * m..(i + 1) * m].iter_mut().for_each(|x| *x *= s);
        }
    }
    let mut col = vec![0.0; m];
    for i in 0..n {
        for j in 0..m {
            col[j] += p[i * m + j];
        }
    }
    for j in 0..m {
        if col[j] > b[j] {
            let s = b[j] / col[j];
            for i in 0..n {
                p[i * m + j] *= s;
            }
        }
    }
    let mut er: Vec<f64> = (0..n).map(|i| a[i] - p[i * m..(i + 1) * m].iter().sum::<f64>()).collect();
    let mut ec = b.to_vec();
    for i in 0..n {
        for j in 0..m {
            ec[j] -= p[i * m + j];
        }
    }
    er.iter_mut().for_each(|x| *x = x.max(0.0));
    ec.iter_mut().for_each(|x| *x = x.max(0.0));
    let norm: f64 = er.iter().sum();
    if norm > 0.0 {
        for i in 0..n {
            for j in 0..m {
                p[i * m + j] += er[i] * ec[j] / norm;
            }
        }
    }
}

/// `Σ a_i f_i + Σ b_j g_j` after two c-transforms, a valid lower bound on the
/// unregularized optimum.
fn c_transform_bound(k: &Dense, f: &[f64]) -> f64 {
    let (n, m) = (k.n, k.m);
    let mut g = vec![f64::INFINITY; m];
    for i in 0..n {
        for j in 0..m {
            g[j] = g[j].min(k.cost[i * m + j] - f[i]);
        }
    }
    let mut f2 = vec![f64::INFINITY; n];
    for i in 0..n {
        for j in 0..m {
            f2[i] = f2[i].min(k.cost[i * m + j] - g[j]);
        }
    }
    let fa: f64 = f2.iter().zip(&k.a).map(|(x, y)| x * y).sum();
    let gb: f64 = g.iter().zip(&k.b).map(|(x, y)| x * y).sum();
    fa + gb
}

fn self_entropic(mu: &WeightedAtoms, problem: &TransportProblem, schedule: &[f64], opts: &EntropicOptions) -> f64 {
    let idx = nonzero_indices(mu);
    let dense = Dense::build(mu, &idx, mu, &idx, problem);
    let mut s = Sinkhorn::new(&dense);
    anneal(&mut s, schedule, opts).dual
}

/// Approximate `W^p` for problems too large for the exact solver.
///
/// Returns the best iterate flagged `converged = false` when the iteration
/// budget runs out.
pub fn wasserstein_entropic(problem: &TransportProblem, opts: &EntropicOptions) -> Result<EntropicResult> {
    opts.validate()?;
    let src = problem.source();
    let tgt = problem.target();
    let rows = nonzero_indices(src);
    let cols = nonzero_indices(tgt);
    let empty = |debias: bool| EntropicResult {
        plan: TransportPlan {
            entries: Vec::new(),
            cost: 0.0,
        },
        report: SolveReport {
            solver: SolverKind::Entropic,
            cost: 0.0,
            gap_bound: 0.0,
            iterations: 0,
            converged: true,
            marginal_violation: 0.0,
            wall_ms: None,
        },
        stages: Vec::new(),
        lower_bound: 0.0,
        upper_bound: 0.0,
        debiased: if debias { Some(0.0) } else { None },
    };
    if rows.is_empty() || cols.is_empty() {
        return Ok(empty(opts.debias));
    }
    let dense = Dense::build(src, &rows, tgt, &cols, problem);
    let scale = median(&dense.cost);
    let scale = if scale > 0.0 { scale } else { dense.cost.iter().fold(0.0f64, |a, &c| a.max(c)) };
    if scale == 0.0 {
        return Ok(empty(opts.debias));
    }
    let schedule = opts.schedule(scale);
    let mut s = Sinkhorn::new(&dense);
    let run = anneal(&mut s, &schedule, opts);
    let mass = src.total_mass();

    let mut p = s.plan(run.eps);
    round_plan(&mut p, &dense.a, &dense.b);
    let m = dense.m;
    let mut entries = Vec::new();
    let mut upper = 0.0;
    for (r, &i) in rows.iter().enumerate() {
        for (c, &j) in cols.iter().enumerate() {
            let v = p[r * m + c];
            if v > 0.0 {
                entries.push((i, j, v * mass));
                upper += v * dense.cost[r * m + c];
            }
        }
    }
    let lower = c_transform_bound(&dense, &s.pot.f).min(upper);
    let cost = run.cost;
    let gap = (upper - lower).max(upper - cost).max(cost - lower).max(0.0);

    let debiased = if opts.debias {
        let xx = self_entropic(src, problem, &schedule, opts);
        let yy = self_entropic(tgt, problem, &schedule, opts);
        Some((run.dual - 0.5 * xx - 0.5 * yy) * mass)
    } else {
        None
    };

    let plan = TransportPlan {
        entries,
        cost: upper * mass,
    };
    let stages = run
        .stages
        .into_iter()
        .map(|st| StageCost {
            cost: st.cost * mass,
            ..st
        })
        .collect();
    Ok(EntropicResult {
        plan,
        report: SolveReport {
            solver: SolverKind::Entropic,
            cost: cost * mass,
            gap_bound: gap * mass,
            iterations: run.iterations,
            converged: run.converged,
            marginal_violation: run.violation,
            wall_ms: None,
        },
        stages,
        lower_bound: lower * mass,
        upper_bound: upper * mass,
        debiased,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{wasserstein_exact, TransportProblem};
    use super::*;
    use crate::geometry::Space;
    use crate::rng::{NoiseSource, SeedSpec};

    fn cloud(n: usize, d: usize, seed: u64, weighted: bool) -> WeightedAtoms {
        let mut rng = SeedSpec::new(seed, 0).rng();
        let pos: Vec<f64> = (0..n * d).map(|_| rng.uniform()).collect();
        let masses: Vec<f64> = (0..n).map(|_| if weighted { 0.5 + rng.uniform() } else { 1.0 }).collect();
        WeightedAtoms::from_parts(d, Space::Euclidean, pos, masses).unwrap()
    }

    #[test]
    fn schedule_is_geometric() {
        let s = EntropicOptions::default().schedule(2.0);
        assert_eq!(s.len(), 8);
        assert!((s[0] - 2.0).abs() < 1e-15);
        assert!((s[7] - 2e-3).abs() < 1e-15);
        assert!(s.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn agrees_with_exact_on_50_by_50() {
        for seed in 0..3 {
            let src = cloud(50, 2, 10 + seed, true);
            let tgt = cloud(50, 2, 20 + seed, true);
            let tgt = tgt.scaled(src.total_mass() / tgt.total_mass()).unwrap();
            for p in [1.0, 2.0] {
                let pb = TransportProblem::new(src.clone(), tgt.clone(), p).unwrap();
                let exact = wasserstein_exact(&pb).unwrap().1.cost;
                let r = wasserstein_entropic(&pb, &EntropicOptions::default()).unwrap();
                let rel = (r.report.cost - exact).abs() / exact;
                assert!(rel < 0.01, "seed {seed} p {p}: {} vs {exact}", r.report.cost);
                assert!(r.lower_bound <= exact * (1.0 + 1e-9));
                assert!(r.upper_bound >= exact * (1.0 - 1e-9));
                assert!(r.report.gap_bound >= 0.0);
                assert!(r.plan.marginal_violation(&pb) < 1e-9);
            }
        }
    }

    #[test]
    fn costs_decrease_along_schedule() {
        let src = cloud(30, 2, 1, false);
        let tgt = cloud(30, 2, 2, false);
        let pb = TransportProblem::new(src, tgt, 1.0).unwrap();
        let opts = EntropicOptions {
            final_ratio: 2e-2,
            tol: 1e-10,
            ..EntropicOptions::default()
        };
        let r = wasserstein_entropic(&pb, &opts).unwrap();
        assert!(r.report.converged, "{:?}", r.stages);
        for w in r.stages.windows(2) {
            assert!(w[1].cost <= w[0].cost + 1e-9, "{} then {}", w[0].cost, w[1].cost);
        }
    }

    #[test]
    fn debiased_identical_measures_vanish() {
        let mu = cloud(25, 3, 5, true);
        let pb = TransportProblem::new(mu.clone(), mu, 2.0).unwrap();
        let opts = EntropicOptions {
            debias: true,
            ..EntropicOptions::default()
        };
        let r = wasserstein_entropic(&pb, &opts).unwrap();
        assert!(r.debiased.unwrap().abs() < 1e-6);
    }

    #[test]
    fn budget_exhaustion_is_flagged() {
        let pb = TransportProblem::new(cloud(20, 2, 7, false), cloud(20, 2, 8, false), 1.0).unwrap();
        let opts = EntropicOptions {
            max_iter: 3,
            ..EntropicOptions::default()
        };
        let r = wasserstein_entropic(&pb, &opts).unwrap();
        assert!(!r.report.converged);
        assert!(r.report.cost.is_finite());
    }

    #[test]
    fn rejects_bad_schedule() {
        let pb = TransportProblem::new(cloud(3, 1, 1, false), cloud(3, 1, 2, false), 1.0).unwrap();
        let opts = EntropicOptions {
            start_ratio: 1e-4,
            ..EntropicOptions::default()
        };
        assert!(wasserstein_entropic(&pb, &opts).is_err());
    }
}
