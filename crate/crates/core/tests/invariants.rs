use gni::analysis::{run, sample_admissible, Integrator};
use gni::cli::{emit_config, parse_config};
use gni::gni_flat::{scheme_step, FlatInitial, FlatStepper, GniGeneric, Quadrature, Scheme};
use gni::gni_reduced::{ChaplyginGni, ChaplyginParams, ReducedInitial, ReducedRattle};
use gni::lie_so3::AlgebraVec;
use gni::model::systems;
use gni::numerics::NewtonConfig;
use nalgebra::dvector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SCHEMES: [Scheme; 4] = [Scheme::EulerA, Scheme::EulerB, Scheme::Rattle, Scheme::ComposedAB];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn flat_schemes_keep_constraints(seed in 0u64..1000, h in 0.01f64..0.2, a in -0.5f64..0.5, which in 0usize..4) {
        let sys = systems::nonholonomic_particle(true, a);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = &sample_admissible(&sys, Scheme::Rattle, 1, 1.0, 0.0, &mut rng).unwrap()[0];
        let init = FlatInitial { q: s.q.clone(), p: s.p.clone() };
        let integ = FlatStepper::new(sys, SCHEMES[which]);
        let traj = run(&integ, &init, h, 30).unwrap().into_result().unwrap();
        prop_assert!(traj.max_constraint_residual() <= 1e-10);
    }

    #[test]
    fn euler_a_and_b_are_adjoint(seed in 0u64..1000, h in 0.01f64..0.2) {
        let sys = systems::constrained_2d(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in sample_admissible(&sys, Scheme::EulerA, 5, 1.0, h, &mut rng).unwrap() {
            let fwd = scheme_step(&sys, Scheme::EulerA, &s, h).unwrap();
            let back = scheme_step(&sys, Scheme::EulerB, &fwd, -h).unwrap();
            prop_assert!(back.distance(&s) <= 1e-9);
        }
    }

    #[test]
    fn rattle_is_symmetric(seed in 0u64..1000, h in 0.01f64..0.2, a in -0.5f64..0.5) {
        let sys = systems::nonholonomic_particle(true, a);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in sample_admissible(&sys, Scheme::Rattle, 5, 1.0, h, &mut rng).unwrap() {
            let fwd = scheme_step(&sys, Scheme::Rattle, &s, h).unwrap();
            let back = scheme_step(&sys, Scheme::Rattle, &fwd, -h).unwrap();
            prop_assert!(back.distance(&s) <= 1e-9);
        }
    }

    #[test]
    fn zero_step_is_identity(seed in 0u64..1000, which in 0usize..4) {
        let sys = systems::nonholonomic_particle(true, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = &sample_admissible(&sys, SCHEMES[which], 1, 1.0, 0.0, &mut rng).unwrap()[0];
        prop_assert_eq!(&scheme_step(&sys, SCHEMES[which], s, 0.0).unwrap(), s);
    }

    #[test]
    fn generic_scheme_keeps_constraints(x in -1.0f64..1.0, v in -1.0f64..1.0, h in 0.01f64..0.1) {
        let sys = systems::constrained_2d(0.0);
        // v1 + v2 = 0 with M = diag(1, 2)
        let init = FlatInitial { q: dvector![x, 0.3], p: dvector![v, -2.0 * v] };
        for lag in [Quadrature::Verlet, Quadrature::EulerA, Quadrature::EulerB] {
            let g = GniGeneric { sys: sys.clone(), lagrangian: lag, newton: NewtonConfig::default() };
            let traj = run(&g, &init, h, 30).unwrap().into_result().unwrap();
            prop_assert!(traj.max_constraint_residual() <= 1e-10);
        }
    }

    #[test]
    fn sphere_schemes_keep_constraints(
        w in prop::array::uniform3(-1.0f64..1.0),
        i in prop::array::uniform3(0.5f64..1.5),
        rate in -0.5f64..0.5,
    ) {
        let params = ChaplyginParams { mass: 2.0, radius: 0.7, table_rate: rate, inertia: i };
        let init = ReducedInitial { x: dvector![0.5, -0.2], x_dot: None, omega: AlgebraVec::from(w) };
        let cg = ChaplyginGni { params, newton: NewtonConfig::default() };
        let traj = run(&cg, &init, 0.05, 40).unwrap().into_result().unwrap();
        prop_assert!(traj.max_constraint_residual() <= 1e-10);

        let q0 = nalgebra::Vector2::new(0.5, -0.2);
        let v0 = params.constraint_velocity(&q0, &init.omega);
        let init = ReducedInitial { x_dot: Some(dvector![v0.x, v0.y]), ..init };
        let rr = ReducedRattle::new(params.reduced_system(), NewtonConfig::default());
        let traj = run(&rr, &init, 0.05, 40).unwrap().into_result().unwrap();
        for s in &traj.states {
            prop_assert!(rr.observe(s, 0.05).constraint_residual <= 1e-10);
        }
    }

    #[test]
    fn configs_round_trip(
        h in 1e-4f64..1.0,
        n in 1usize..100_000,
        inertia in prop::array::uniform3(0.1f64..5.0),
        rate in -2.0f64..2.0,
        seed in any::<u64>(),
    ) {
        let text = format!(
            "[system]\nname = chaplygin\ntable_rate = {rate}\ninertia = {}, {}, {}\n\
             [integrator]\nname = reduced_rattle\nretraction = exp\n[run]\nh = {h}\nN = {n}\nseed = {seed}\n",
            inertia[0], inertia[1], inertia[2]
        );
        let a = parse_config(&text).unwrap();
        let b = parse_config(&emit_config(&a)).unwrap();
        prop_assert_eq!(a, b);
    }
}
