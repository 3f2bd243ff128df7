use brownot_core::transport::{check_subadditivity, wasserstein_exact, TransportProblem};
use brownot_core::{Space, WeightedAtoms};
use proptest::prelude::*;

const TOL: f64 = 1e-9;

fn close_le(a: f64, b: f64) -> bool {
    a <= b + TOL * b.abs().max(1.0)
}

fn measure(d: usize, max_atoms: usize) -> impl Strategy<Value = WeightedAtoms> {
    (1..=max_atoms).prop_flat_map(move |n| {
        (
            prop::collection::vec(0.0f64..1.0, n * d),
            prop::collection::vec(0.05f64..2.0, n),
        )
            .prop_map(move |(pos, masses)| WeightedAtoms::from_parts(d, Space::Euclidean, pos, masses).unwrap())
    })
}

/// A pair of measures with equal total mass.
fn pair(d: usize, max_atoms: usize) -> impl Strategy<Value = (WeightedAtoms, WeightedAtoms)> {
    (measure(d, max_atoms), measure(d, max_atoms)).prop_map(|(a, b)| {
        let b = b.scaled(a.total_mass() / b.total_mass()).unwrap();
        (a, b)
    })
}

fn cost(mu: &WeightedAtoms, la: &WeightedAtoms, p: f64) -> f64 {
    wasserstein_exact(&TransportProblem::new(mu.clone(), la.clone(), p).unwrap()).unwrap().1.cost
}

fn exponent() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.25), Just(0.5), Just(1.0), Just(1.5), Just(2.0), 0.1f64..3.0]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn subadditivity((m1, l1) in pair(2, 5), (m2, l2) in pair(2, 5), p in exponent()) {
        let r = check_subadditivity(&m1, &m2, &l1, &l2, p).unwrap();
        prop_assert!(r.holds, "joint {} > {} + {}", r.joint, r.first, r.second);
        prop_assert!(close_le(r.joint, r.first + r.second));
    }

    #[test]
    fn homogeneity_in_mass((mu, la) in pair(3, 6), p in exponent(), a in 0.01f64..100.0) {
        let base = cost(&mu, &la, p);
        let scaled = cost(&mu.scaled(a).unwrap(), &la.scaled(a).unwrap(), p);
        prop_assert!((scaled - a * base).abs() <= TOL * (a * base).max(1e-12));
    }

    #[test]
    fn holder_between_exponents((mu, la) in pair(2, 6), p in 0.1f64..1.5) {
        let r = 2.0;
        let mass = mu.total_mass();
        let lhs = cost(&mu, &la, p);
        let rhs = mass.powf(1.0 - 1.0 / r) * cost(&mu, &la, p * r).powf(1.0 / r);
        prop_assert!(close_le(lhs, rhs), "{lhs} > {rhs}");
    }

    #[test]
    fn triangle_inequality_below_one(
        (mu, la) in pair(2, 5),
        nu in measure(2, 5),
        p in 0.05f64..1.0,
    ) {
        let nu = nu.scaled(mu.total_mass() / nu.total_mass()).unwrap();
        let direct = cost(&mu, &nu, p);
        let via = cost(&mu, &la, p) + cost(&la, &nu, p);
        prop_assert!(close_le(direct, via), "{direct} > {via}");
    }

    #[test]
    fn diameter_upper_bound((mu, la) in pair(3, 7), p in exponent()) {
        // Both supports lie in the unit cube of diameter √3.
        let bound = 3.0f64.sqrt().powf(p) * mu.total_mass();
        prop_assert!(close_le(cost(&mu, &la, p), bound));
    }

    #[test]
    fn support_lower_bound((mu, la) in pair(2, 7), p in exponent()) {
        let lower: f64 = mu
            .iter()
            .map(|(x, m)| {
                let near = la
                    .iter()
                    .map(|(y, _)| x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                    .fold(f64::INFINITY, f64::min);
                m * near.powf(p)
            })
            .sum();
        prop_assert!(close_le(lower, cost(&mu, &la, p)));
    }

    #[test]
    fn plans_are_feasible((mu, la) in pair(3, 8), p in exponent()) {
        let pb = TransportProblem::new(mu.clone(), la.clone(), p).unwrap();
        let (plan, report) = wasserstein_exact(&pb).unwrap();
        prop_assert!(plan.entries.iter().all(|e| e.2 >= 0.0));
        prop_assert!(plan.marginal_violation(&pb) <= TOL);
        let recomputed: f64 = plan.contributions(&pb).iter().sum();
        prop_assert!((recomputed - report.cost).abs() <= 1e-12 * report.cost.max(1e-300) + 1e-15);
        prop_assert!(report.gap_bound >= 0.0);
    }
}
