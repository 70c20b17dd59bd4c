use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qdd_core::algebra::{commutator, kron, ladder_pair, matrix_exp_apply, HilbertSpace, Operator, StateVector};
use qdd_core::linalg::{c, realified_rank, realify, realify_mat, unrealify, unrealify_mat, CMat, CVec};
use qdd_core::models::{Scenario, ScenarioParams};
use qdd_core::observation::{
    build_c_tilde, check_closed_loop_necessary, check_interaction_brackets, check_open_loop, ClosureOrder,
};
use qdd_core::simulation::{propagate, PulseSchedule, Segment};
use qdd_core::tangent::{bracket_linear_fields, omega_closure_open};

fn random_mat(rng: &mut ChaCha8Rng, n: usize) -> CMat {
    CMat::from_fn(n, n, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn random_skew(space: &HilbertSpace, rng: &mut ChaCha8Rng) -> Operator {
    let m = random_mat(rng, space.total_dim());
    let h = (&m + m.adjoint()) * c(0.5, 0.0);
    Operator::hermitian(space.clone(), h).unwrap().to_generator().unwrap()
}

fn params(g: f64) -> ScenarioParams {
    ScenarioParams {
        g: c(g, 0.0),
        w: c(g, 0.0),
        ..ScenarioParams::default()
    }
}

fn light_scenarios() -> impl Strategy<Value = Scenario> {
    prop_oneof![
        Just(Scenario::SingleQubit),
        Just(Scenario::TwoQubit),
        Just(Scenario::Restructured { max_power: 1 })
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tensor_commutator_identity(seed in any::<u64>(), n in 2usize..4, m in 2usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, cc) = (random_mat(&mut rng, n), random_mat(&mut rng, n));
        let (b, d) = (random_mat(&mut rng, m), random_mat(&mut rng, m));
        let lhs = &kron(&a, &b) * &kron(&cc, &d) - &kron(&cc, &d) * &kron(&a, &b);
        let rhs = kron(&(&cc * &a), &(&b * &d - &d * &b)) + kron(&(&a * &cc - &cc * &a), &(&b * &d));
        prop_assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn ladder_commutator_below_the_top_level(n in 2usize..10) {
        let (b, bd) = ladder_pair(n).unwrap();
        let k = &b * &bd - &bd * &b;
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j && i + 1 < n { 1.0 } else if i == j { 1.0 - n as f64 } else { 0.0 };
                prop_assert!((k[(i, j)] - c(expect, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn exponential_flow_preserves_norm(seed in any::<u64>(), t in -20.0f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let space = HilbertSpace::new(&[("q", 2), ("env", 3)]).unwrap();
        let a = random_skew(&space, &mut rng);
        let xi = StateVector::random(&space, &mut rng);
        let out = matrix_exp_apply(&a, t, &xi).unwrap();
        prop_assert!((out.amplitudes().norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn realification_roundtrips(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = CMat::from_fn(rows, cols, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        prop_assert_eq!(unrealify_mat(&realify_mat(&m), rows, cols), m.clone());
        let v = m.column(0).into_owned();
        prop_assert_eq!(unrealify(&realify(&v)), v);
    }

    #[test]
    fn realified_rank_scales_and_grows_by_at_most_one(seed in any::<u64>(), k in 1usize..6, s in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vs: Vec<CVec> = (0..k).map(|_| random_mat(&mut rng, 4).column(0).into_owned()).collect();
        if k > 2 {
            vs[2] = &vs[0] * c(0.0, 2.0);
        }
        let r = realified_rank(&vs, 1e-10);
        let mut scaled = vs.clone();
        scaled[0] *= c(s, 0.0);
        prop_assert_eq!(realified_rank(&scaled, 1e-10), r);
        vs.push(random_mat(&mut rng, 4).column(0).into_owned());
        let r2 = realified_rank(&vs, 1e-10);
        prop_assert!(r2 == r || r2 == r + 1);
    }

    #[test]
    fn jacobi_identity_for_linear_fields(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let space = HilbertSpace::new(&[("q", 2), ("env", 2)]).unwrap();
        let (a, b, d) = (random_skew(&space, &mut rng), random_skew(&space, &mut rng), random_skew(&space, &mut rng));
        let br = |x: &Operator, y: &Operator| bracket_linear_fields(x, y).unwrap();
        let sum = br(&a, &br(&b, &d)).add(&br(&b, &br(&d, &a))).unwrap().add(&br(&d, &br(&a, &b))).unwrap();
        prop_assert!(sum.norm() < 1e-12);
    }

    #[test]
    fn schedules_compose(seed in any::<u64>(), d1 in 0.05f64..1.0, d2 in 0.05f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sys = Scenario::TwoQubit.build(&ScenarioParams::default()).unwrap();
        let mut u = || (0..4).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let s1 = PulseSchedule::new(vec![Segment { duration: d1, controls: u() }]).unwrap();
        let s2 = PulseSchedule::new(vec![Segment { duration: d2, controls: u() }]).unwrap();
        let xi = StateVector::random(&sys.space, &mut rng);
        let whole = propagate(&sys, &s1.then(&s2).unwrap(), &xi, 0.05).unwrap();
        let first = propagate(&sys, &s1, &xi, 0.05).unwrap();
        let mid = StateVector::new(sys.space.clone(), first.final_state().clone()).unwrap();
        let second = propagate(&sys, &s2, &mid, 0.05).unwrap();
        prop_assert!((whole.final_state() - second.final_state()).norm() < 1e-10);
        prop_assert!(whole.norm_drift < 1e-8);
    }

    #[test]
    fn verdicts_ignore_control_scaling(sc in light_scenarios(), g in prop_oneof![Just(0.0), 0.05f64..0.5], k in 0usize..4, s in prop_oneof![-3.0f64..-0.2, 0.2f64..3.0]) {
        let sys = sc.build(&params(g)).unwrap();
        let mut controls = sys.controls.clone();
        let k = k % controls.len();
        controls[k] = controls[k].scale(s);
        let scaled = sys.with_controls(controls, sys.control_labels.clone());
        let verdicts = |x: &qdd_core::models::ControlSystem| {
            let n = x.dim();
            let ct = build_c_tilde(x, 2 * n * n, ClosureOrder::ControlsFirst, 1e-9).unwrap();
            (
                ct.dim(),
                check_open_loop(x, &ct, 1e-9).unwrap().passed,
                check_closed_loop_necessary(x, &ct, 1e-9).unwrap().passed,
                check_interaction_brackets(x, 1e-9).unwrap().passed,
            )
        };
        prop_assert_eq!(verdicts(&sys), verdicts(&scaled));
    }

    #[test]
    fn case_one_implies_case_two(sc in light_scenarios(), g in prop_oneof![Just(0.0), 0.05f64..0.5]) {
        let sys = sc.build(&params(g)).unwrap();
        let n = sys.dim();
        let ct = build_c_tilde(&sys, 2 * n * n, ClosureOrder::ControlsFirst, 1e-9).unwrap();
        if check_open_loop(&sys, &ct, 1e-9).unwrap().passed {
            prop_assert!(check_closed_loop_necessary(&sys, &ct, 1e-9).unwrap().passed);
        }
        let extra: Vec<Operator> = ct.basis.iter().flat_map(|x| {
            sys.generators().into_iter().map(move |a| commutator(&a, x).unwrap())
        }).collect();
        prop_assert!(ct.residuals(&extra).into_iter().all(|r| r < 1e-8));
    }

    #[test]
    fn observation_duality(seed in any::<u64>(), g in 0.0f64..0.5) {
        let sys = Scenario::SingleQubit.build(&params(g)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xi = StateVector::random(&sys.space, &mut rng);
        let r = omega_closure_open(&sys, &xi, 4096, 1e-9).unwrap();
        prop_assert_eq!(r.delta.dim() + r.omega.rank(1e-9), 2 * sys.dim());
    }
}
