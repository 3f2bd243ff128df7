//! Wasserstein costs `W^p` between finite atomic measures.
//!
//! `W^p(μ, λ) = min_π Σ π_ij d(x_i, y_j)^p` over couplings with marginals
//! `μ` and `λ`; it is infinite when the total masses differ. Three solvers
//! are available: an exact network simplex, exhaustive search over
//! permutations for tiny uniform instances, and log-domain Sinkhorn with
//! ε-scaling for problems beyond the exact solver's size cap.

mod entropic;
mod fourier;
mod simplex;

use alloc::vec;
use alloc::vec::Vec;

pub use entropic::{wasserstein_entropic, EntropicOptions, EntropicResult, StageCost};
pub use fourier::{
    ball_indicator_fourier, fourier_coefficients, smoothed_coefficients, sobolev_upper_bound, FourierTable, SobolevBound,
};
pub use simplex::PivotRule;

use crate::error::{Error, Result};
use crate::geometry::{distance, neumaier_sum, restrict_measure, uniform_discretization, Domain, Space, WeightedAtoms};
use crate::stats::heap_permutations;

/// Default bound on `n_source · n_target` for the exact solver.
pub const DEFAULT_EXACT_CAP: usize = 4_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Euclidean,
    TorusFlat,
}

impl Metric {
    pub fn for_space(space: Space) -> Metric {
        match space {
            Space::Euclidean => Metric::Euclidean,
            Space::Torus => Metric::TorusFlat,
        }
    }

    fn space(self) -> Space {
        match self {
            Metric::Euclidean => Space::Euclidean,
            Metric::TorusFlat => Space::Torus,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportProblem {
    source: WeightedAtoms,
    target: WeightedAtoms,
    p: f64,
    metric: Metric,
}

impl TransportProblem {
    /// Rejects problems whose total masses differ by more than
    /// `1e-9 · max(masses)`.
    pub fn new(source: WeightedAtoms, target: WeightedAtoms, p: f64) -> Result<Self> {
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::invalid("p", "must be positive and finite"));
        }
        if source.dim() != target.dim() {
            return Err(Error::DimensionMismatch {
                expected: source.dim(),
                found: target.dim(),
            });
        }
        if source.space() != target.space() {
            return Err(Error::SpaceMismatch {
                expected: source.space().name(),
            });
        }
        let (ms, mt) = (source.total_mass(), target.total_mass());
        if (ms - mt).abs() > 1e-9 * ms.max(mt) {
            return Err(Error::MassMismatch {
                source_mass: ms,
                target_mass: mt,
            });
        }
        let metric = Metric::for_space(source.space());
        Ok(TransportProblem {
            source,
            target,
            p,
            metric,
        })
    }

    pub fn source(&self) -> &WeightedAtoms {
        &self.source
    }

    pub fn target(&self) -> &WeightedAtoms {
        &self.target
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    #[inline]
    pub fn cost(&self, i: usize, j: usize) -> f64 {
        ground_cost(self.metric, self.source.position(i), self.target.position(j), self.p)
    }

    /// Same problem with both measures multiplied by `a`.
    pub fn scaled(&self, a: f64) -> Result<Self> {
        TransportProblem::new(self.source.scaled(a)?, self.target.scaled(a)?, self.p)
    }
}

#[inline]
pub fn ground_cost(metric: Metric, x: &[f64], y: &[f64], p: f64) -> f64 {
    let r = distance(metric.space(), x, y);
    if p == 1.0 {
        r
    } else if p == 2.0 {
        r * r
    } else {
        libm::pow(r, p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    /// `(source index, target index, mass)` with indices into the original
    /// (unfiltered) measures.
    pub entries: Vec<(usize, usize, f64)>,
    pub cost: f64,
}

impl TransportPlan {
    pub fn row_sums(&self, n: usize) -> Vec<f64> {
        let mut r = vec![0.0; n];
        for &(i, _, m) in &self.entries {
            r[i] += m;
        }
        r
    }

    pub fn column_sums(&self, m: usize) -> Vec<f64> {
        let mut c = vec![0.0; m];
        for &(_, j, v) in &self.entries {
            c[j] += v;
        }
        c
    }

    /// Largest marginal violation relative to the total mass.
    pub fn marginal_violation(&self, problem: &TransportProblem) -> f64 {
        let total = problem.source.total_mass().max(f64::MIN_POSITIVE);
        let rows = self.row_sums(problem.source.len());
        let cols = self.column_sums(problem.target.len());
        let r = rows
            .iter()
            .zip(problem.source.masses())
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        let c = cols
            .iter()
            .zip(problem.target.masses())
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        r.max(c) / total
    }

    /// Per-entry cost contributions `mass · d(x_i, y_j)^p`.
    pub fn contributions(&self, problem: &TransportProblem) -> Vec<f64> {
        self.entries.iter().map(|&(i, j, m)| m * problem.cost(i, j)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Exact,
    BruteForce,
    Entropic,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Exact => "exact",
            SolverKind::BruteForce => "bruteforce",
            SolverKind::Entropic => "entropic",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub solver: SolverKind,
    pub cost: f64,
    /// Upper bound on `cost - W^p`; zero for exact solves.
    pub gap_bound: f64,
    pub iterations: u64,
    pub converged: bool,
    pub marginal_violation: f64,
    /// Wall time in milliseconds, filled in by callers that own a clock.
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactOptions {
    pub max_entries: usize,
    pub pivot: PivotRule,
    pub max_iterations: u64,
}

impl Default for ExactOptions {
    fn default() -> Self {
        ExactOptions {
            max_entries: DEFAULT_EXACT_CAP,
            pivot: PivotRule::BlockSearch,
            max_iterations: u64::MAX,
        }
    }
}

fn nonzero_indices(mu: &WeightedAtoms) -> Vec<usize> {
    (0..mu.len()).filter(|&i| mu.mass(i) > 0.0).collect()
}

fn empty_solution(solver: SolverKind) -> (TransportPlan, SolveReport) {
    (
        TransportPlan {
            entries: Vec::new(),
            cost: 0.0,
        },
        SolveReport {
            solver,
            cost: 0.0,
            gap_bound: 0.0,
            iterations: 0,
            converged: true,
            marginal_violation: 0.0,
            wall_ms: None,
        },
    )
}

pub fn wasserstein_exact(problem: &TransportProblem) -> Result<(TransportPlan, SolveReport)> {
    wasserstein_exact_with(problem, &ExactOptions::default())
}

/// Exact optimum of the transportation linear program.
pub fn wasserstein_exact_with(problem: &TransportProblem, opts: &ExactOptions) -> Result<(TransportPlan, SolveReport)> {
    let rows = nonzero_indices(&problem.source);
    let cols = nonzero_indices(&problem.target);
    if rows.is_empty() || cols.is_empty() {
        return Ok(empty_solution(SolverKind::Exact));
    }
    let entries = rows.len().saturating_mul(cols.len());
    if entries > opts.max_entries {
        return Err(Error::SizeCapExceeded {
            entries,
            cap: opts.max_entries,
        });
    }
    let supply: Vec<f64> = rows.iter().map(|&i| problem.source.mass(i)).collect();
    let total_s = problem.source.total_mass();
    let total_t = problem.target.total_mass();
    // Rescale the target to the source mass so the network is balanced.
    let ratio = total_s / total_t;
    let demand: Vec<f64> = cols.iter().map(|&j| problem.target.mass(j) * ratio).collect();
    let m = cols.len();
    let mut cost = vec![0.0; entries];
    for (a, &i) in rows.iter().enumerate() {
        let x = problem.source.position(i);
        for (b, &j) in cols.iter().enumerate() {
            cost[a * m + b] = ground_cost(problem.metric, x, problem.target.position(j), problem.p);
        }
    }
    let ns = simplex::NetworkSimplex::new(&supply, &demand, &cost, opts.pivot);
    let sol = ns
        .solve(opts.max_iterations)
        .ok_or_else(|| Error::Degenerate("network simplex hit its iteration limit".into()))?;
    let mut plan_entries = Vec::with_capacity(sol.flows.len());
    let mut contrib = Vec::with_capacity(sol.flows.len());
    for &(a, b, f) in &sol.flows {
        plan_entries.push((rows[a], cols[b], f));
        contrib.push(f * cost[a * m + b]);
    }
    let (s, c) = neumaier_sum(contrib.into_iter());
    let plan = TransportPlan {
        entries: plan_entries,
        cost: s + c,
    };
    let violation = plan.marginal_violation(problem);
    let report = SolveReport {
        solver: SolverKind::Exact,
        cost: plan.cost,
        gap_bound: 0.0,
        iterations: sol.iterations,
        converged: true,
        marginal_violation: violation,
        wall_ms: None,
    };
    Ok((plan, report))
}

/// Minimum over all permutations for `n ≤ 8` atoms of equal mass on each
/// side. Equals the linear program optimum by Birkhoff's theorem.
pub fn wasserstein_bruteforce(problem: &TransportProblem) -> Result<f64> {
    let n = problem.source.len();
    if n != problem.target.len() {
        return Err(Error::invalid("problem", "needs equal atom counts"));
    }
    if n == 0 {
        return Ok(0.0);
    }
    if n > 8 {
        return Err(Error::invalid("problem", "brute force is limited to 8 atoms"));
    }
    let w = problem.source.mass(0);
    let equal = |mu: &WeightedAtoms| mu.masses().iter().all(|&m| (m - w).abs() <= 1e-12 * w.abs().max(1e-300));
    if !equal(&problem.source) || !equal(&problem.target) {
        return Err(Error::invalid("problem", "brute force needs uniform masses"));
    }
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cost[i * n + j] = problem.cost(i, j);
        }
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    heap_permutations(&mut perm, &mut |p| {
        let s: f64 = p.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
        if s < best {
            best = s;
        }
    });
    Ok(best * w)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolverChoice {
    Exact(ExactOptions),
    Entropic(EntropicOptions),
}

impl Default for SolverChoice {
    fn default() -> Self {
        SolverChoice::Exact(ExactOptions::default())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniformCost {
    pub cost: f64,
    /// Mass of `μ ↾ Ω`.
    pub mass: f64,
    /// `diam(cell)^p · mass`, the discretization allowance of the grid
    /// standing in for the Lebesgue measure.
    pub grid_error_bound: f64,
    pub grid_atoms: usize,
    pub report: SolveReport,
}

/// `W^p_Ω(μ)`: transport from `μ ↾ Ω` to the uniform measure on `Ω` of the
/// same mass, represented by a cell-center grid.
pub fn wasserstein_to_uniform(mu: &WeightedAtoms, omega: &Domain, p: f64, grid_n: usize, solver: &SolverChoice) -> Result<UniformCost> {
    let restricted = restrict_measure(mu, omega)?.without_zero_mass();
    let mass = restricted.total_mass();
    if restricted.is_empty() || mass == 0.0 {
        let (_, report) = empty_solution(match solver {
            SolverChoice::Exact(_) => SolverKind::Exact,
            SolverChoice::Entropic(_) => SolverKind::Entropic,
        });
        return Ok(UniformCost {
            cost: 0.0,
            mass: 0.0,
            grid_error_bound: 0.0,
            grid_atoms: 0,
            report,
        });
    }
    let grid = uniform_discretization(omega, grid_n)?;
    let target = grid.atoms.scaled(mass / grid.atoms.total_mass())?;
    let grid_atoms = target.len();
    let cell_diam = grid.cell_side * libm::sqrt(omega.dim() as f64);
    let problem = TransportProblem::new(restricted, target, p)?;
    let report = match solver {
        SolverChoice::Exact(opts) => wasserstein_exact_with(&problem, opts)?.1,
        SolverChoice::Entropic(opts) => wasserstein_entropic(&problem, opts)?.report,
    };
    Ok(UniformCost {
        cost: report.cost,
        mass,
        grid_error_bound: libm::pow(cell_diam, p) * mass,
        grid_atoms,
        report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubadditivityReport {
    pub joint: f64,
    pub first: f64,
    pub second: f64,
    /// `first + second - joint`.
    pub slack: f64,
    pub holds: bool,
}

/// `W^p(μ1 + μ2, λ1 + λ2) ≤ W^p(μ1, λ1) + W^p(μ2, λ2)` with exact solves.
pub fn check_subadditivity(
    mu1: &WeightedAtoms,
    mu2: &WeightedAtoms,
    l1: &WeightedAtoms,
    l2: &WeightedAtoms,
    p: f64,
) -> Result<SubadditivityReport> {
    let first = wasserstein_exact(&TransportProblem::new(mu1.clone(), l1.clone(), p)?)?.1.cost;
    let second = wasserstein_exact(&TransportProblem::new(mu2.clone(), l2.clone(), p)?)?.1.cost;
    let joint = wasserstein_exact(&TransportProblem::new(mu1.concat(mu2)?, l1.concat(l2)?, p)?)?.1.cost;
    let slack = first + second - joint;
    Ok(SubadditivityReport {
        joint,
        first,
        second,
        slack,
        holds: joint <= first + second + 1e-9,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{NoiseSource, SeedSpec};

    fn atoms(points: &[&[f64]], masses: &[f64], space: Space) -> WeightedAtoms {
        let d = points[0].len();
        let pos: Vec<f64> = points.iter().flat_map(|p| p.iter().copied()).collect();
        WeightedAtoms::from_parts(d, space, pos, masses.to_vec()).unwrap()
    }

    fn random_atoms<N: NoiseSource>(n: usize, d: usize, rng: &mut N, uniform_mass: bool) -> WeightedAtoms {
        let pos: Vec<f64> = (0..n * d).map(|_| rng.uniform()).collect();
        let masses: Vec<f64> = (0..n).map(|_| if uniform_mass { 1.0 } else { rng.uniform() }).collect();
        WeightedAtoms::from_parts(d, Space::Euclidean, pos, masses).unwrap()
    }

    #[test]
    fn identical_measures_cost_nothing() {
        let mut rng = SeedSpec::new(1, 0).rng();
        let mu = random_atoms(12, 2, &mut rng, false);
        let (plan, rep) = wasserstein_exact(&TransportProblem::new(mu.clone(), mu.clone(), 1.0).unwrap()).unwrap();
        assert!(rep.cost.abs() < 1e-12);
        assert!(plan.entries.iter().all(|&(i, j, _)| i == j));
    }

    #[test]
    fn forced_split() {
        let src = atoms(&[&[0.0]], &[1.0], Space::Euclidean);
        let tgt = atoms(&[&[-0.25], &[0.25]], &[0.5, 0.5], Space::Euclidean);
        let (plan, rep) = wasserstein_exact(&TransportProblem::new(src, tgt, 1.0).unwrap()).unwrap();
        assert!((rep.cost - 0.25).abs() < 1e-15);
        assert_eq!(plan.entries.len(), 2);
    }

    #[test]
    fn brute_force_examples() {
        let src = atoms(&[&[0.0], &[1.0]], &[1.0, 1.0], Space::Euclidean);
        let tgt = atoms(&[&[0.1], &[0.9]], &[1.0, 1.0], Space::Euclidean);
        let pb = TransportProblem::new(src, tgt, 1.0).unwrap();
        assert!((wasserstein_bruteforce(&pb).unwrap() - 0.2).abs() < 1e-12);

        // Concave cost: sources at 0 and 1, targets at 1 and 2. Identity
        // pays 2·1^0.5 = 2, crossing pays 0 + 2^0.5 ≈ 1.414.
        let src = atoms(&[&[0.0], &[1.0]], &[1.0, 1.0], Space::Euclidean);
        let tgt = atoms(&[&[1.0], &[2.0]], &[1.0, 1.0], Space::Euclidean);
        let pb = TransportProblem::new(src, tgt, 0.5).unwrap();
        let bf = wasserstein_bruteforce(&pb).unwrap();
        assert!((bf - libm::sqrt(2.0)).abs() < 1e-12);
        assert!((wasserstein_exact(&pb).unwrap().1.cost - bf).abs() < 1e-12);

        let one = TransportProblem::new(atoms(&[&[0.0, 0.0]], &[1.0], Space::Euclidean), atoms(&[&[3.0, 4.0]], &[1.0], Space::Euclidean), 2.0).unwrap();
        assert!((wasserstein_bruteforce(&one).unwrap() - 25.0).abs() < 1e-12);
    }

    #[test]
    fn exact_matches_brute_force_with_tree_checks() {
        let mut rng = SeedSpec::new(2, 0).rng();
        for trial in 0..300 {
            let n = 1 + trial % 7;
            let p = [0.5, 1.0, 2.0][trial % 3];
            let src = random_atoms(n, 2, &mut rng, true);
            let tgt = random_atoms(n, 2, &mut rng, true);
            let pb = TransportProblem::new(src, tgt, p).unwrap();
            let bf = wasserstein_bruteforce(&pb).unwrap();
            for rule in [PivotRule::BlockSearch, PivotRule::FirstEligible] {
                let opts = ExactOptions {
                    pivot: rule,
                    ..ExactOptions::default()
                };
                let (plan, rep) = wasserstein_exact_with(&pb, &opts).unwrap();
                assert!((rep.cost - bf).abs() <= 1e-9 * bf.max(1.0), "n={n} p={p}: {} vs {bf}", rep.cost);
                assert!(plan.marginal_violation(&pb) < 1e-12);
            }
        }
    }

    #[test]
    fn unequal_masses_and_zero_atoms() {
        let mut rng = SeedSpec::new(3, 0).rng();
        for _ in 0..100 {
            let src = random_atoms(6, 3, &mut rng, false);
            let mut tgt = random_atoms(9, 3, &mut rng, false);
            tgt = tgt.scaled(src.total_mass() / tgt.total_mass()).unwrap();
            let mut masses = tgt.masses().to_vec();
            let pos = tgt.positions().to_vec();
            masses.push(0.0);
            let mut pos2 = pos.clone();
            pos2.extend_from_slice(&[0.5, 0.5, 0.5]);
            let tgt2 = WeightedAtoms::from_parts(3, Space::Euclidean, pos2, masses).unwrap();
            let pb = TransportProblem::new(src.clone(), tgt2, 1.5).unwrap();
            let (plan, rep) = wasserstein_exact(&pb).unwrap();
            assert!(plan.marginal_violation(&pb) < 1e-12);
            assert!(plan.entries.iter().all(|&(_, j, _)| j < 9));
            let recomputed: f64 = plan.contributions(&pb).iter().sum();
            assert!((recomputed - rep.cost).abs() <= 1e-12 * rep.cost.max(1e-300));
        }
    }

    #[test]
    fn mass_mismatch_and_cap() {
        let a = atoms(&[&[0.0]], &[1.0], Space::Euclidean);
        let b = atoms(&[&[0.0]], &[1.1], Space::Euclidean);
        assert!(matches!(TransportProblem::new(a.clone(), b, 1.0), Err(Error::MassMismatch { .. })));
        let mut rng = SeedSpec::new(4, 0).rng();
        let big = random_atoms(30, 1, &mut rng, true);
        let pb = TransportProblem::new(big.clone(), big, 1.0).unwrap();
        let opts = ExactOptions {
            max_entries: 100,
            ..ExactOptions::default()
        };
        assert!(matches!(wasserstein_exact_with(&pb, &opts), Err(Error::SizeCapExceeded { .. })));
    }

    #[test]
    fn torus_costs_wrap() {
        let a = atoms(&[&[0.45]], &[1.0], Space::Torus);
        let b = atoms(&[&[-0.45]], &[1.0], Space::Torus);
        let pb = TransportProblem::new(a, b, 1.0).unwrap();
        assert!((wasserstein_exact(&pb).unwrap().1.cost - 0.1).abs() < 1e-12);
    }

    #[test]
    fn to_uniform_examples() {
        let cube = Domain::euclidean_cube(1, 1.0).unwrap();
        let dirac = atoms(&[&[0.0]], &[1.0], Space::Euclidean);
        let r = wasserstein_to_uniform(&dirac, &cube, 1.0, 400, &SolverChoice::default()).unwrap();
        assert!((r.cost - 0.25).abs() < r.grid_error_bound);
        let empty = WeightedAtoms::empty(1, Space::Euclidean);
        assert_eq!(wasserstein_to_uniform(&empty, &cube, 1.0, 10, &SolverChoice::default()).unwrap().cost, 0.0);
        let grid = uniform_discretization(&cube, 10).unwrap().atoms;
        let r = wasserstein_to_uniform(&grid, &cube, 1.0, 10, &SolverChoice::default()).unwrap();
        assert!(r.cost.abs() < 1e-12);
    }

    #[test]
    fn subadditivity_examples() {
        let mu1 = atoms(&[&[0.0]], &[1.0], Space::Euclidean);
        let l1 = atoms(&[&[1.0]], &[1.0], Space::Euclidean);
        let mu2 = atoms(&[&[10.0]], &[1.0], Space::Euclidean);
        let l2 = atoms(&[&[10.5]], &[1.0], Space::Euclidean);
        let r = check_subadditivity(&mu1, &mu2, &l1, &l2, 1.0).unwrap();
        assert!(r.holds);
        assert!(r.slack.abs() < 1e-12);
        // μ2 = λ2 contributes nothing on the right-hand side.
        let r = check_subadditivity(&mu1, &mu2, &l1, &mu2, 2.0).unwrap();
        assert!(r.holds && r.second == 0.0);
    }
}
