mod common;

use std::sync::OnceLock;

use common::Oracle;
use logistic_harvest::continuation::composite_distance;
use logistic_harvest::lambda1::LambdaSet;
use logistic_harvest::linalg::TridiagonalOperator;
use logistic_harvest::spectrum;
use logistic_harvest::verify::count_nodal_domains;
use logistic_harvest::{newton_solve, Problem, SolverConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn coarse() -> &'static Problem {
    static P: OnceLock<Problem> = OnceLock::new();
    P.get_or_init(|| Problem::standard(63, 1.0).unwrap())
}

fn coarse_set() -> &'static LambdaSet {
    static S: OnceLock<LambdaSet> = OnceLock::new();
    S.get_or_init(|| LambdaSet::build(coarse()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sturm_counts_match_dense_eigenvalues(
        diag in prop::collection::vec(-5.0f64..5.0, 12),
        off in prop::collection::vec(-2.0f64..2.0, 11),
        shift in -6.0f64..6.0,
    ) {
        let op = TridiagonalOperator::new(diag.clone(), off.clone());
        let dense = DMatrix::from_fn(12, 12, |i, j| match (i, j) {
            _ if i == j => diag[i],
            _ if j == i + 1 => off[i],
            _ if i == j + 1 => off[j],
            _ => 0.0,
        });
        let ev = common::dense_eigenvalues(dense);
        prop_assume!(ev.iter().all(|e| (e - shift).abs() > 1e-9));
        prop_assert_eq!(spectrum::count_below(&op, shift), ev.iter().filter(|&&e| e < shift).count());
    }

    #[test]
    fn sine_mode_k_has_k_nodal_domains(k in 1usize..30) {
        let p = coarse();
        let u = p.grid.sine_mode(k);
        prop_assert_eq!(count_nodal_domains(&u, 1e-12), k);
    }

    #[test]
    fn composite_distance_is_a_metric(s in -3.0f64..3.0, c0 in -5.0f64..5.0, c1 in -5.0f64..5.0) {
        let p = coarse();
        let u = p.phi.scaled(s);
        let v = p.psi.clone();
        let d = composite_distance(p, &u, c0, &v, c1);
        prop_assert!(d >= (c0 - c1).abs());
        prop_assert!((d - composite_distance(p, &v, c1, &u, c0)).abs() <= 1e-15 * d.max(1.0));
        prop_assert_eq!(composite_distance(p, &u, c0, &u, c0), 0.0);
    }

    /// Below the first eigenvalue the library and the dense oracle agree.
    #[test]
    fn newton_matches_dense_oracle_below_lambda1(rel in -1.0f64..0.9, c in -30.0f64..30.0) {
        let p = coarse();
        let a = rel * p.lambda1;
        let s = newton_solve(p, a, c, &p.grid.zeros(), &SolverConfig::default()).unwrap();
        let oracle = Oracle::new(p);
        let u = oracle.newton(a, c, &DVector::zeros(p.n())).unwrap();
        let diff = s.u.iter().zip(u.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        prop_assert!(diff <= 1e-8, "diff {diff:e}");
        prop_assert_eq!(s.morse_index(), 0);
        prop_assert!(s.phi_identity_defect(p).abs() <= 1e-9);
    }

    /// A pair lies in the set exactly when its profile stays below `M`.
    #[test]
    fn lambda_set_membership(t in -3.0f64..1.5, c in -60.0f64..60.0) {
        let p = coarse();
        let set = coarse_set();
        let max = set.profile(t, c).max();
        prop_assume!((max - p.threshold()).abs() > 1e-9);
        prop_assert_eq!(set.contains(t, c), max <= p.threshold());
    }

    #[test]
    fn competition_term_is_convex_and_nondecreasing(u in -5.0f64..5.0, v in -5.0f64..5.0) {
        let f = coarse().f;
        let (fu, du, ddu) = f.eval(u);
        prop_assert!(fu >= 0.0 && du >= 0.0 && ddu >= 0.0);
        if u < v {
            prop_assert!(f.value(u) <= f.value(v));
        }
        let m = 0.5 * (u + v);
        prop_assert!(f.value(m) <= 0.5 * (f.value(u) + f.value(v)) + 1e-12);
    }
}
