//! Property tests for the module invariants.

use hamflow_core::dynamics::{
    flow_oscillation, flow_reflection, flow_zero, leapfrog, ForceField, PhaseState,
};
use hamflow_core::gmm::GaussianMixture;
use hamflow_core::linalg;
use hamflow_core::net::{Mlp, MlpConfig, Tape};
use hamflow_core::rng::Rng;
use proptest::prelude::*;

fn arb_mixture() -> impl Strategy<Value = GaussianMixture> {
    (2usize..4)
        .prop_flat_map(|k| {
            (
                proptest::collection::vec(0.05f64..1.0, k),
                proptest::collection::vec(-3.0f64..3.0, k),
                proptest::collection::vec(0.2f64..2.0, k),
            )
        })
        .prop_map(|(raw_w, mus, vars)| {
            let total: f64 = raw_w.iter().sum();
            let weights: Vec<f64> = raw_w.iter().map(|w| w / total).collect();
            // Renormalize exactly.
            let correction: f64 = 1.0 - weights.iter().sum::<f64>();
            let mut weights = weights;
            weights[0] += correction;
            let means = mus.into_iter().map(|m| vec![m]).collect();
            GaussianMixture::new(weights, means, vars).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn score_is_gradient_of_log_density(m in arb_mixture(), x in -6.0f64..6.0) {
        let h = 1e-4;
        let fd = (m.log_density(&[x + h]).unwrap() - m.log_density(&[x - h]).unwrap()) / (2.0 * h);
        let s = m.score(&[x]).unwrap()[0];
        prop_assert!((fd - s).abs() < 1e-6, "fd {} score {}", fd, s);
    }

    #[test]
    fn posterior_sums_to_one(m in arb_mixture(), x in -8.0f64..8.0) {
        let total: f64 = m.posterior(&[x]).unwrap().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oscillation_flow_conserves_energy(
        x in -2.0f64..2.0,
        v in -2.0f64..2.0,
        alpha in 0.3f64..2.5,
        t in 0.0f64..6.0,
    ) {
        let s = PhaseState::new(vec![x], vec![v]).unwrap();
        let moved = flow_oscillation(&s, t, alpha);
        let e0 = 0.5 * alpha * alpha * x * x + 0.5 * v * v;
        let e1 = 0.5 * alpha * alpha * moved.x[0] * moved.x[0] + 0.5 * moved.v[0] * moved.v[0];
        prop_assert!((e0 - e1).abs() < 1e-12);
    }

    #[test]
    fn leapfrog_reverses_in_time(
        x in -1.5f64..1.5,
        v in -1.5f64..1.5,
        steps in 3usize..40,
    ) {
        let m = GaussianMixture::bimodal_1d();
        let force = ForceField::AnalyticScore(m);
        let s = PhaseState::new(vec![x], vec![v]).unwrap();
        let fwd = leapfrog(&force, &s, 0.0, 1.0, steps).unwrap();
        let flipped = PhaseState::new(fwd.x.clone(), linalg::scale(&fwd.v, -1.0)).unwrap();
        let back = leapfrog(&force, &flipped, 0.0, 1.0, steps).unwrap();
        prop_assert!((back.x[0] - x).abs() < 1e-10);
        prop_assert!((-back.v[0] - v).abs() < 1e-10);
    }

    #[test]
    fn reflection_keeps_state_in_box_and_speed(
        x in -0.99f64..0.99,
        v in -3.0f64..3.0,
        t in 0.0f64..10.0,
    ) {
        let s = PhaseState::new(vec![x], vec![v]).unwrap();
        let r = flow_reflection(&s, t, &[-1.0], &[1.0]).unwrap();
        prop_assert!(r.x[0] >= -1.0 && r.x[0] <= 1.0);
        prop_assert!((r.v[0].abs() - v.abs()).abs() < 1e-12);
        // Short-time flight without wall contact is free flight.
        if (x + t * v).abs() < 1.0 {
            let free = flow_zero(&s, t);
            prop_assert!((r.x[0] - free.x[0]).abs() < 1e-12);
            prop_assert!(r.v[0] == free.v[0]);
        }
    }

    #[test]
    fn tape_replay_and_gradient_on_random_nets(seed in 0u64..5000) {
        let mut rng = Rng::new(seed);
        let mut net = Mlp::new(MlpConfig::time_conditioned(1, vec![6]), &mut rng);
        let mut p = net.params_flat();
        for w in &mut p {
            if *w == 0.0 {
                *w = rng.uniform(-0.7, 0.7);
            }
        }
        net.set_params_flat(&p).unwrap();

        let x = [rng.normal()];
        let t = rng.next_f64();
        let mut tape = Tape::new();
        let binding = net.bind(&mut tape);
        let x_id = tape.leaf(&x);
        let t_id = tape.leaf_scalar(t);
        let out = net.forward_taped(&mut tape, &binding, x_id, Some(t_id));
        let l = tape.sq_norm(out);
        prop_assert!(tape.replay_check());

        let grads = tape.backward(l);
        let g = net.grad_flat(&binding, &grads);
        // Single-coordinate finite difference on a random parameter.
        let idx = (rng.next_below(p.len())) as usize;
        let h = 1e-5;
        let eval = |shift: f64| {
            let mut n = net.clone();
            let mut q = p.clone();
            q[idx] += shift;
            n.set_params_flat(&q).unwrap();
            let y = n.forward(&x, Some(t)).unwrap();
            linalg::norm_sq(&y)
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        prop_assert!(
            (g[idx] - fd).abs() <= 1e-3 * fd.abs().max(1e-4),
            "grad {} fd {}", g[idx], fd
        );
    }

    #[test]
    fn split_rng_replays(seed in 0u64..10_000, idx in 0u64..64) {
        let a = Rng::new(seed).split(idx).next_u64();
        let b = Rng::new(seed).split(idx).next_u64();
        prop_assert_eq!(a, b);
    }
}
