mod common;

use proplace::milp::{export_lp, parse_lp, solve_with, SolveOptions, SolveStatus};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{enumerate_milp, random_milp};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn branch_and_bound_matches_enumeration(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_milp(&mut rng, 8);
        let sol = solve_with(&m.model, &SolveOptions::default()).unwrap();
        match enumerate_milp(&m) {
            None => prop_assert_eq!(sol.status, SolveStatus::Infeasible),
            Some(v) => {
                prop_assert_eq!(sol.status, SolveStatus::Optimal);
                prop_assert!((sol.objective_value - v).abs() <= 1e-6, "{} vs {}", sol.objective_value, v);
                prop_assert!(m.model.max_violation(&sol.values) <= 1e-6);
                for b in &m.binaries {
                    let x = sol.value(*b);
                    prop_assert!(x == 0.0 || x == 1.0, "binary value {}", x);
                }
            }
        }
    }

    #[test]
    fn lp_round_trip_keeps_the_optimum(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_milp(&mut rng, 6);
        let parsed = parse_lp(&export_lp(&m.model)).unwrap();
        let a = solve_with(&m.model, &SolveOptions::default()).unwrap();
        let b = solve_with(&parsed, &SolveOptions::default()).unwrap();
        prop_assert_eq!(a.status, b.status);
        if a.status == SolveStatus::Optimal {
            prop_assert!((a.objective_value - b.objective_value).abs() <= 1e-9);
        }
    }
}
