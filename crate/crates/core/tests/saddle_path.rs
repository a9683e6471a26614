//! Saddle-path norm and speed bounds on the built-in problem and random quadratics.

use nalgebra::{DMatrix, DVector};
use pdflow::problem::{build_paper_problem, build_quadratic, solve_min_norm_kkt, ProblemInstance};
use pdflow::saddle::{saddle_velocity, solve_saddle, RegularizationSchedule};
use proptest::prelude::*;

fn quadratic(seed: [f64; 12]) -> ProblemInstance {
    let b = DMatrix::from_column_slice(4, 2, &seed[..8]);
    let q = &b * b.transpose();
    let linear = &q * DVector::from_column_slice(&seed[8..12]);
    let a = DMatrix::from_row_slice(1, 4, &seed[..4]);
    let rhs = DVector::from_element(1, seed[4]);
    let inst = build_quadratic(q, linear, 0.0, a, rhs).unwrap();
    let oracle = solve_min_norm_kkt(&inst).unwrap();
    inst.with_oracle(oracle).unwrap()
}

fn check(inst: &ProblemInstance, c: f64, p: f64, t: f64) -> Result<(), TestCaseError> {
    let sched = RegularizationSchedule::new(c, p).unwrap();
    let star = inst.oracle().unwrap().norm();
    let sp = solve_saddle(inst, &sched, t, None).unwrap();
    prop_assert!(sp.norm() <= star + 1e-6, "norm {} > {}", sp.norm(), star);
    let vel = saddle_velocity(inst, &sched, t).unwrap();
    prop_assert!(vel.norm() <= p / t * star + 1e-6, "speed {} > {}", vel.norm(), p / t * star);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn builtin_problem_bounds(c in 0.01f64..2.0, p in 0.05f64..0.95, log_t in 0.0f64..4.0) {
        check(&build_paper_problem(), c, p, 10f64.powf(log_t))?;
    }

    #[test]
    fn random_quadratic_bounds(
        seed in prop::array::uniform12(-1.0f64..1.0),
        c in 0.05f64..1.0,
        p in 0.1f64..0.9,
        log_t in 0.0f64..3.0,
    ) {
        prop_assume!(seed[..4].iter().map(|v| v * v).sum::<f64>() > 1e-2);
        check(&quadratic(seed), c, p, 10f64.powf(log_t))?;
    }
}

#[test]
fn path_approaches_min_norm_pair() {
    let inst = build_paper_problem();
    let sched = RegularizationSchedule::new(0.1, 0.5).unwrap();
    let oracle = inst.oracle().unwrap();
    let mut prev = f64::INFINITY;
    for t in [1.0, 1e2, 1e4, 1e6] {
        let sp = solve_saddle(&inst, &sched, t, None).unwrap();
        let d = ((&sp.x - &oracle.min_norm_primal).norm_squared() + (&sp.lambda - &oracle.min_norm_dual).norm_squared()).sqrt();
        assert!(d < prev, "t = {t}: {d} vs {prev}");
        prev = d;
    }
    assert!(prev < 1e-2);
}
