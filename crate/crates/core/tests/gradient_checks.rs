//! Tape gradients against central finite differences for every loss that
//! training differentiates, including losses that reach through leapfrog
//! trajectories.

use hamflow_core::dynamics::{leapfrog, leapfrog_taped, ForceField, PhaseState, TapedForce};
use hamflow_core::gmm::GaussianMixture;
use hamflow_core::hgf::TimeDist;
use hamflow_core::hsm;
use hamflow_core::net::{Mlp, MlpConfig, Tape};
use hamflow_core::rng::Rng;

fn randomized(config: MlpConfig, seed: u64, spread: f64) -> Mlp {
    let mut rng = Rng::new(seed);
    let mut net = Mlp::new(config, &mut rng);
    let mut p = net.params_flat();
    for w in &mut p {
        if *w == 0.0 {
            *w = rng.uniform(-spread, spread);
        }
    }
    net.set_params_flat(&p).unwrap();
    net
}

/// Central-difference directional derivative of `f` at `params` along `dir`.
fn fd_directional(params: &[f64], dir: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let plus: Vec<f64> = params.iter().zip(dir).map(|(p, d)| p + h * d).collect();
    let minus: Vec<f64> = params.iter().zip(dir).map(|(p, d)| p - h * d).collect();
    (f(&plus) - f(&minus)) / (2.0 * h)
}

#[test]
fn velocity_loss_gradient_matches_finite_differences() {
    let m = GaussianMixture::bimodal_1d();
    let net = randomized(MlpConfig::time_conditioned(1, vec![12, 12]), 3, 0.5);
    let params = net.params_flat();

    // Fixed draw set.
    let mut rng = Rng::new(8);
    let draws: Vec<(Vec<f64>, f64, Vec<f64>)> = (0..32)
        .map(|_| {
            let t = rng.uniform(0.0, 2.0);
            let x = m.sample_one(&mut rng);
            let eps = rng.normal_vec(1);
            (hamflow_core::linalg::axpy(&x, t, &eps), t, eps)
        })
        .collect();

    let loss_of = |p: &[f64]| {
        let mut n = net.clone();
        n.set_params_flat(p).unwrap();
        draws
            .iter()
            .map(|(x_t, t, v)| {
                let out = n.forward(x_t, Some(*t)).unwrap();
                hamflow_core::linalg::norm_sq(&hamflow_core::linalg::sub(&out, v))
            })
            .sum::<f64>()
            / draws.len() as f64
    };

    // Tape gradient of the same batch.
    let mut tape = Tape::new();
    let binding = net.bind(&mut tape);
    let mut acc = None;
    for (x_t, t, v) in &draws {
        let x_id = tape.leaf(x_t);
        let t_id = tape.leaf_scalar(*t);
        let out = net.forward_taped(&mut tape, &binding, x_id, Some(t_id));
        let tgt = tape.leaf(v);
        let diff = tape.sub(out, tgt);
        let l = tape.sq_norm(diff);
        acc = Some(match acc {
            None => l,
            Some(a) => tape.add(a, l),
        });
    }
    let mean = tape.scale(acc.unwrap(), 1.0 / draws.len() as f64);
    let grad = net.grad_flat(&binding, &tape.backward(mean));

    let mut dir_rng = Rng::new(91);
    for probe in 0..10 {
        let dir: Vec<f64> = (0..params.len()).map(|_| dir_rng.normal()).collect();
        let analytic: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        let fd = fd_directional(&params, &dir, 1e-4, loss_of);
        let rel = (analytic - fd).abs() / fd.abs().max(1e-9);
        assert!(rel <= 1e-3, "probe {probe}: analytic {analytic} fd {fd} rel {rel}");
    }
}

#[test]
fn leapfrog_endpoint_gradient_matches_finite_differences() {
    // Five steps through a learned force; gradient with respect to the
    // force parameters and the initial state.
    let force_net = randomized(MlpConfig::autonomous(2, vec![10]), 5, 0.4);
    let params = force_net.params_flat();
    let x0 = vec![0.4, -0.3];
    let v0 = vec![-0.2, 0.7];
    let probe = vec![1.0, -0.5];

    let endpoint_probe = |p: &[f64], x0v: &[f64], v0v: &[f64]| {
        let mut n = force_net.clone();
        n.set_params_flat(p).unwrap();
        let force = ForceField::Learned { net: n, time_dependent: false };
        let s = PhaseState::new(x0v.to_vec(), v0v.to_vec()).unwrap();
        let end = leapfrog(&force, &s, 0.0, 1.0, 5).unwrap();
        hamflow_core::linalg::dot(&end.x, &probe)
    };

    let mut tape = Tape::new();
    let binding = force_net.bind(&mut tape);
    let taped = TapedForce::Learned { net: &force_net, binding: &binding, time_dependent: false };
    let x_id = tape.leaf(&x0);
    let v_id = tape.leaf(&v0);
    let (xe, _ve) = leapfrog_taped(&mut tape, &taped, x_id, v_id, 0.0, 1.0, 5).unwrap();
    let probe_id = tape.leaf(&probe);
    let out = tape.dot(xe, probe_id);
    let grads = tape.backward(out);
    let g_params = force_net.grad_flat(&binding, &grads);
    let g_x0 = grads.wrt(x_id).to_vec();

    let mut dir_rng = Rng::new(17);
    for _ in 0..10 {
        let dir: Vec<f64> = (0..params.len()).map(|_| dir_rng.normal()).collect();
        let analytic: f64 = g_params.iter().zip(&dir).map(|(g, d)| g * d).sum();
        let fd = fd_directional(&params, &dir, 1e-4, |p| endpoint_probe(p, &x0, &v0));
        let rel = (analytic - fd).abs() / fd.abs().max(1e-9);
        assert!(rel <= 1e-3, "params: analytic {analytic} fd {fd} rel {rel}");
    }

    // Initial-state gradient.
    for i in 0..2 {
        let h = 1e-5;
        let mut plus = x0.clone();
        let mut minus = x0.clone();
        plus[i] += h;
        minus[i] -= h;
        let fd = (endpoint_probe(&params, &plus, &v0) - endpoint_probe(&params, &minus, &v0))
            / (2.0 * h);
        let rel = (g_x0[i] - fd).abs() / fd.abs().max(1e-9);
        assert!(rel <= 1e-3, "x0[{i}]: analytic {} fd {fd}", g_x0[i]);
    }
}

#[test]
fn dsm_loss_gradient_matches_finite_differences() {
    let m = GaussianMixture::bimodal_1d();
    let net = randomized(MlpConfig::autonomous(1, vec![10]), 23, 0.5);
    let params = net.params_flat();
    let (_, grad) = hsm::dsm_loss_grad(&net, &m, 0.3, 64, &mut Rng::new(4)).unwrap();
    let loss_of = |p: &[f64]| {
        let mut n = net.clone();
        n.set_params_flat(p).unwrap();
        hsm::dsm_loss(&n, &m, 0.3, 64, &mut Rng::new(4)).unwrap()
    };
    let mut dir_rng = Rng::new(5);
    for _ in 0..10 {
        let dir: Vec<f64> = (0..params.len()).map(|_| dir_rng.normal()).collect();
        let analytic: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        let fd = fd_directional(&params, &dir, 1e-4, loss_of);
        let rel = (analytic - fd).abs() / fd.abs().max(1e-9);
        assert!(rel <= 1e-3, "analytic {analytic} fd {fd} rel {rel}");
    }
}

#[test]
fn force_objective_gradient_probes() {
    // The min-max force objective differentiates through the trajectory;
    // ten random probes against finite differences.
    let m = GaussianMixture::standard_1d();
    let force_net = randomized(MlpConfig::autonomous(1, vec![8]), 31, 0.5);
    let v_net = randomized(MlpConfig::time_conditioned(1, vec![8]), 32, 0.5);
    let params = force_net.params_flat();

    let (_, grad) = hsm::force_objective_grad(
        &force_net, &v_net, &m, TimeDist::Fixed(0.7), 1.0, 5, 24, &mut Rng::new(77),
    )
    .unwrap();

    let value_of = |p: &[f64]| {
        let mut n = force_net.clone();
        n.set_params_flat(p).unwrap();
        let (v, _) = hsm::force_objective_grad(
            &n, &v_net, &m, TimeDist::Fixed(0.7), 1.0, 5, 24, &mut Rng::new(77),
        )
        .unwrap();
        v
    };
    let mut dir_rng = Rng::new(6);
    for _ in 0..10 {
        let dir: Vec<f64> = (0..params.len()).map(|_| dir_rng.normal()).collect();
        let analytic: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        let fd = fd_directional(&params, &dir, 1e-4, value_of);
        let rel = (analytic - fd).abs() / fd.abs().max(1e-9);
        assert!(rel <= 1e-3, "analytic {analytic} fd {fd} rel {rel}");
    }
}
