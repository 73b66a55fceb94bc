//! Hamiltonian score matching.
//!
//! The force field is trained so that the optimal velocity predictor of its
//! PH-ODE is zero; the attained minimum of the velocity loss doubles as a
//! score discrepancy. This module holds the losses, the discrepancy
//! estimator, the alternating min-max trainer, and the score-matching
//! baselines (explicit, denoising, implicit) used to validate it.

use crate::dynamics::{leapfrog, leapfrog_taped, ForceField, PhaseState, TapedForce};
use crate::error::{Error, Result};
use crate::gmm::GaussianMixture;
use crate::hgf::{cosine_lr, TimeDist};
use crate::linalg::{dot, norm_sq, sub};
use crate::metrics::MeanAccumulator;
use crate::net::{AdamState, Mlp, MlpConfig, Tape};
use crate::rng::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Min-max training configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HsmConfig {
    /// Trajectory horizon T.
    pub horizon: f64,
    pub lambda: TimeDist,
    /// Leapfrog steps per trajectory.
    pub n_steps: usize,
    /// Inner velocity steps per force step.
    pub k_inner: usize,
    pub lr_v: f64,
    pub lr_f: f64,
    pub batch: usize,
    /// Outer iterations.
    pub iterations: usize,
    /// Velocity-only steps before the first force update.
    pub warmup_inner: usize,
    pub seed: u64,
    /// Outer iterations between oracle diagnostics.
    pub diag_interval: usize,
    /// Diagnostic windows without ESM improvement before a warning.
    pub patience: usize,
}

impl Default for HsmConfig {
    fn default() -> Self {
        HsmConfig {
            horizon: 1.0,
            lambda: TimeDist::Uniform,
            n_steps: 5,
            k_inner: 5,
            lr_v: 2e-3,
            lr_f: 1e-3,
            batch: 128,
            iterations: 2000,
            warmup_inner: 300,
            seed: 0,
            diag_interval: 50,
            patience: 8,
        }
    }
}

/// Push one Boltzmann-Gibbs draw through the PH-ODE of `force` to time `t`.
pub fn push_through_flow(
    force: &ForceField,
    x: Vec<f64>,
    v: Vec<f64>,
    t: f64,
    n_steps: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if t == 0.0 {
        return Ok((x, v));
    }
    let s = leapfrog(force, &PhaseState::new(x, v)?, 0.0, t, n_steps)?;
    Ok((s.x, s.v))
}

/// Source of supervision minibatch items for the inner velocity fit.
type TripleDraw = Box<dyn FnMut(&mut Rng) -> Result<Vec<Triple>>>;

/// One `(x_t, t, v_t)` supervision triple.
#[derive(Debug, Clone)]
pub struct Triple {
    pub x_t: Vec<f64>,
    pub t: f64,
    pub v_t: Vec<f64>,
}

/// Simulate `n` supervision triples in parallel over split RNG streams;
/// the result is independent of the worker count.
#[allow(clippy::too_many_arguments)]
pub fn simulate_triples(
    force: &ForceField,
    m: &GaussianMixture,
    lambda: TimeDist,
    horizon: f64,
    n_steps: usize,
    n: usize,
    rng: &Rng,
) -> Result<Vec<Triple>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.split(i);
            let t = lambda.draw(horizon, &mut r);
            let x = m.sample_one(&mut r);
            let v = r.normal_vec(m.dim());
            let (x_t, v_t) = push_through_flow(force, x, v, t, n_steps)?;
            Ok(Triple { x_t, t, v_t })
        })
        .collect()
}

/// The three Monte-Carlo means of one shared draw set:
/// `L_hsm = E[||V||^2 - 2 V . v_t]`, the velocity loss
/// `L_V = E||V - v_t||^2`, and `E||v_t||^2`. On identical draws
/// `L_hsm = L_V - E||v_t||^2` up to rounding.
#[derive(Debug, Clone, Copy)]
pub struct HsmLossParts {
    pub hsm: f64,
    pub velocity_loss: f64,
    pub mean_sq_velocity: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn hsm_loss_parts(
    v_net: &Mlp,
    force: &ForceField,
    m: &GaussianMixture,
    t: f64,
    batch: usize,
    n_steps: usize,
    rng: &mut Rng,
) -> Result<HsmLossParts> {
    let mut hsm = 0.0;
    let mut lv = 0.0;
    let mut msv = 0.0;
    for _ in 0..batch {
        let x = m.sample_one(rng);
        let v = rng.normal_vec(m.dim());
        let (x_t, v_t) = push_through_flow(force, x, v, t, n_steps)?;
        let pred = v_net.forward(&x_t, Some(t))?;
        hsm += norm_sq(&pred) - 2.0 * dot(&pred, &v_t);
        lv += norm_sq(&sub(&pred, &v_t));
        msv += norm_sq(&v_t);
    }
    let n = batch as f64;
    Ok(HsmLossParts { hsm: hsm / n, velocity_loss: lv / n, mean_sq_velocity: msv / n })
}

/// Monte-Carlo `L_hsm(phi | theta, t)`.
pub fn hsm_loss(
    v_net: &Mlp,
    force: &ForceField,
    m: &GaussianMixture,
    t: f64,
    batch: usize,
    n_steps: usize,
    rng: &mut Rng,
) -> Result<f64> {
    Ok(hsm_loss_parts(v_net, force, m, t, batch, n_steps, rng)?.hsm)
}

/// Discrepancy estimator configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HsdConfig {
    pub lambda: TimeDist,
    pub horizon: f64,
    pub n_steps: usize,
    /// Fresh velocity-net hidden widths.
    pub v_hidden: Vec<usize>,
    /// Supervision pool size for the inner fit.
    pub pool: usize,
    /// Upper bound on inner Adam steps; a loss plateau stops earlier.
    pub inner_steps: usize,
    pub inner_batch: usize,
    pub inner_lr: f64,
    /// Plateau window (steps) and relative-change threshold.
    pub plateau_window: usize,
    pub plateau_rel: f64,
    /// Antithetic evaluation pairs for the final estimate.
    pub eval_pairs: usize,
    /// Polyak-average the inner fit over this trailing fraction of steps.
    pub tail_average: f64,
    /// Draw a fresh supervision minibatch every inner step instead of
    /// resampling the fixed pool. Removes pool-reuse bias; affordable when
    /// trajectory simulation is cheap (analytic or zero forces).
    pub fresh_draws: bool,
    /// With fresh draws, build fit batches from antithetic velocity pairs;
    /// at small times the target noise cancels within a pair, which
    /// sharpens the inner fit considerably.
    pub antithetic_fit: bool,
    /// Independent fit+eval replicates averaged into the estimate.
    pub replicates: usize,
    pub seed: u64,
}

impl Default for HsdConfig {
    fn default() -> Self {
        HsdConfig {
            lambda: TimeDist::Uniform,
            horizon: 1.0,
            n_steps: 5,
            v_hidden: vec![64, 64],
            pool: 1 << 17,
            inner_steps: 2000,
            inner_batch: 256,
            inner_lr: 2e-3,
            plateau_window: 100,
            plateau_rel: 1e-3,
            eval_pairs: 100_000,
            tail_average: 0.25,
            fresh_draws: false,
            antithetic_fit: false,
            replicates: 1,
            seed: 0,
        }
    }
}

impl HsdConfig {
    /// Reduced-budget variant for quick validation passes.
    pub fn fast(seed: u64) -> Self {
        HsdConfig {
            pool: 1 << 15,
            inner_steps: 1500,
            eval_pairs: 30_000,
            seed,
            ..HsdConfig::default()
        }
    }
}

/// A Hamiltonian score discrepancy estimate with its Monte-Carlo error.
#[derive(Debug, Clone, Copy)]
pub struct HsdEstimate {
    pub value: f64,
    pub std_error: f64,
    /// Inner Adam steps actually taken before the plateau stop.
    pub inner_steps_used: usize,
}

/// Fit a velocity net by minibatch Adam with cosine decay, drawing each
/// sample from `draw`; stops early on a loss plateau (only when Polyak
/// averaging is off).
#[allow(clippy::too_many_arguments)]
fn fit_velocity(
    draw: &mut dyn FnMut(&mut Rng) -> Result<Vec<Triple>>,
    mut net: Mlp,
    steps: usize,
    batch: usize,
    lr: f64,
    plateau_window: usize,
    plateau_rel: f64,
    tail_average: f64,
    rng: &mut Rng,
) -> Result<(Mlp, usize)> {
    let mut params = net.params_flat();
    let mut adam = AdamState::new(params.len(), lr);
    let mut tape = Tape::new();
    let mut recent: Vec<f64> = Vec::with_capacity(steps);
    let tail_start = if tail_average > 0.0 {
        steps - ((steps as f64 * tail_average) as usize).clamp(1, steps)
    } else {
        usize::MAX
    };
    let mut tail_sum = vec![0.0; params.len()];
    let mut tail_count = 0usize;
    let finish = |net: &mut Mlp, tail_sum: &[f64], tail_count: usize, used: usize| -> Result<usize> {
        if tail_count > 0 {
            let avg: Vec<f64> = tail_sum.iter().map(|s| s / tail_count as f64).collect();
            net.set_params_flat(&avg)?;
        }
        Ok(used)
    };

    for step in 0..steps {
        adam.lr = cosine_lr(lr, step, steps);
        tape.clear();
        let binding = net.bind(&mut tape);
        let mut acc = None;
        let mut drawn = 0usize;
        while drawn < batch {
            for triple in draw(rng)? {
                if drawn == batch {
                    break;
                }
                let x_id = tape.leaf(&triple.x_t);
                let t_id = tape.leaf_scalar(triple.t);
                let out = net.forward_taped(&mut tape, &binding, x_id, Some(t_id));
                let target = tape.leaf(&triple.v_t);
                let diff = tape.sub(out, target);
                let l = tape.sq_norm(diff);
                acc = Some(match acc {
                    None => l,
                    Some(a) => tape.add(a, l),
                });
                drawn += 1;
            }
        }
        let mean = tape.scale(acc.unwrap(), 1.0 / batch as f64);
        let loss = tape.scalar(mean);
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { iter: step });
        }
        recent.push(loss);

        let grads = tape.backward(mean);
        let grad = net.grad_flat(&binding, &grads);
        adam.step(&mut params, &grad)?;
        net.set_params_flat(&params)?;
        if step >= tail_start {
            for (s, p) in tail_sum.iter_mut().zip(&params) {
                *s += p;
            }
            tail_count += 1;
        }

        // Plateau stop (only without Polyak averaging, which needs its
        // full trailing window): windowed means changing by less than
        // plateau_rel.
        if tail_start == usize::MAX && step >= 2 * plateau_window && step % plateau_window == 0 {
            let last: f64 =
                recent[step - plateau_window..].iter().sum::<f64>() / plateau_window as f64;
            let prev: f64 = recent[step - 2 * plateau_window..step - plateau_window]
                .iter()
                .sum::<f64>()
                / plateau_window as f64;
            if (last - prev).abs() / prev.abs().max(1e-9) < plateau_rel {
                let used = finish(&mut net, &tail_sum, tail_count, step + 1)?;
                return Ok((net, used));
            }
        }
    }
    let used = finish(&mut net, &tail_sum, tail_count, steps)?;
    Ok((net, used))
}

/// Estimate the Hamiltonian score discrepancy
/// `-min_phi L_hsm(phi | theta)` averaged over `t ~ lambda`.
///
/// A fresh velocity net is trained against the frozen force (on a
/// presimulated pool, or on fresh minibatches with `fresh_draws`), then
/// `-L_hsm` is evaluated on fresh draws. Evaluation uses antithetic
/// velocity pairs `(x, v)` / `(x, -v)` — both are exact Boltzmann-Gibbs
/// draws, so the estimate stays unbiased while the linear noise term
/// cancels. With `replicates > 1` the whole procedure repeats on
/// independent seeds and the mean is returned.
pub fn hsd_estimate(
    force: &ForceField,
    m: &GaussianMixture,
    cfg: &HsdConfig,
) -> Result<HsdEstimate> {
    if cfg.replicates > 1 {
        let mut values = Vec::with_capacity(cfg.replicates);
        let mut within = 0.0;
        let mut inner_used = 0;
        for k in 0..cfg.replicates {
            let sub = HsdConfig {
                replicates: 1,
                seed: Rng::new(cfg.seed).split(k as u64).next_u64(),
                ..cfg.clone()
            };
            let est = hsd_estimate(force, m, &sub)?;
            values.push(est.value);
            within += est.std_error * est.std_error;
            inner_used = inner_used.max(est.inner_steps_used);
        }
        let k = cfg.replicates as f64;
        let mean = values.iter().sum::<f64>() / k;
        let spread = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
        let std_error = (within / (k * k)).sqrt().max((spread / k).sqrt());
        return Ok(HsdEstimate { value: mean, std_error, inner_steps_used: inner_used });
    }
    let root = Rng::new(cfg.seed);
    let mut draw: TripleDraw = if cfg.fresh_draws {
        let force = force.clone();
        let m = m.clone();
        let (lambda, horizon, n_steps) = (cfg.lambda, cfg.horizon, cfg.n_steps);
        let antithetic = cfg.antithetic_fit;
        Box::new(move |rng: &mut Rng| {
            let t = lambda.draw(horizon, rng);
            let x = m.sample_one(rng);
            let v = rng.normal_vec(m.dim());
            let mut legs = vec![v.clone()];
            if antithetic {
                legs.push(crate::linalg::scale(&v, -1.0));
            }
            legs.into_iter()
                .map(|vel| {
                    let (x_t, v_t) = push_through_flow(&force, x.clone(), vel, t, n_steps)?;
                    Ok(Triple { x_t, t, v_t })
                })
                .collect()
        })
    } else {
        let pool_rng = root.split(1);
        let pool = simulate_triples(
            force,
            m,
            cfg.lambda,
            cfg.horizon,
            cfg.n_steps,
            cfg.pool,
            &pool_rng,
        )?;
        Box::new(move |rng: &mut Rng| Ok(vec![pool[rng.next_below(pool.len())].clone()]))
    };

    let mut init_rng = root.split(2);
    let v_net = Mlp::new(
        MlpConfig::time_conditioned(m.dim(), cfg.v_hidden.clone()),
        &mut init_rng,
    );
    let mut fit_rng = root.split(3);
    let (v_net, inner_steps_used) = fit_velocity(
        &mut draw,
        v_net,
        cfg.inner_steps,
        cfg.inner_batch,
        cfg.inner_lr,
        cfg.plateau_window,
        cfg.plateau_rel,
        cfg.tail_average,
        &mut fit_rng,
    )?;
    drop(draw);

    let eval_rng = root.split(4);
    let (value, std_error) = hsd_eval(
        force,
        m,
        &v_net,
        cfg.lambda,
        cfg.horizon,
        cfg.n_steps,
        cfg.eval_pairs,
        &eval_rng,
    )?;
    Ok(HsdEstimate { value, std_error, inner_steps_used })
}

/// `-L_hsm` of a fixed velocity net over fresh antithetic draws.
#[allow(clippy::too_many_arguments)]
fn hsd_eval(
    force: &ForceField,
    m: &GaussianMixture,
    v_net: &Mlp,
    lambda: TimeDist,
    horizon: f64,
    n_steps: usize,
    pairs: usize,
    rng: &Rng,
) -> Result<(f64, f64)> {
    let terms: Vec<f64> = (0..pairs as u64)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut r = rng.split(i);
            let t = lambda.draw(horizon, &mut r);
            let x = m.sample_one(&mut r);
            let v = r.normal_vec(m.dim());
            let neg_v: Vec<f64> = v.iter().map(|c| -c).collect();
            let mut term = 0.0;
            for vel in [v, neg_v] {
                let (x_t, v_t) = push_through_flow(force, x.clone(), vel, t, n_steps)?;
                let pred = v_net.forward(&x_t, Some(t))?;
                term += 2.0 * dot(&pred, &v_t) - norm_sq(&pred);
            }
            Ok(term / 2.0)
        })
        .collect::<Result<_>>()?;
    let mut acc = MeanAccumulator::default();
    for v in terms {
        acc.push(v);
    }
    Ok((acc.mean(), acc.std_error()))
}

/// Explicit score matching `0.5 E_pi ||∇ log pi - F||^2`, available here
/// because the mixture score is analytic. Autonomous forces are evaluated
/// at t = 0.
pub fn esm_loss(force: &ForceField, m: &GaussianMixture, n: usize, rng: &mut Rng) -> Result<f64> {
    let mut acc = 0.0;
    for _ in 0..n {
        let x = m.sample_one(rng);
        let s = m.score(&x)?;
        let f = force.eval(&x, 0.0)?;
        acc += 0.5 * norm_sq(&sub(&s, &f));
    }
    Ok(acc / n as f64)
}

/// Denoising score matching `E ||F(x + sigma eps) + eps / sigma||^2`.
pub fn dsm_loss(
    net: &Mlp,
    m: &GaussianMixture,
    sigma: f64,
    batch: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(Error::invalid("dsm noise level must be positive"));
    }
    let mut acc = 0.0;
    for _ in 0..batch {
        let x = m.sample_one(rng);
        let eps = rng.normal_vec(m.dim());
        let noisy = crate::linalg::axpy(&x, sigma, &eps);
        let f = net.forward(&noisy, None)?;
        let resid: Vec<f64> = f.iter().zip(&eps).map(|(fi, e)| fi + e / sigma).collect();
        acc += norm_sq(&resid);
    }
    Ok(acc / batch as f64)
}

/// Denoising score matching loss and its gradient in the score parameters.
pub fn dsm_loss_grad(
    net: &Mlp,
    m: &GaussianMixture,
    sigma: f64,
    batch: usize,
    rng: &mut Rng,
) -> Result<(f64, Vec<f64>)> {
    if sigma <= 0.0 {
        return Err(Error::invalid("dsm noise level must be positive"));
    }
    let mut tape = Tape::new();
    let binding = net.bind(&mut tape);
    let mut acc = None;
    for _ in 0..batch {
        let x = m.sample_one(rng);
        let eps = rng.normal_vec(m.dim());
        let noisy = crate::linalg::axpy(&x, sigma, &eps);
        let x_id = tape.leaf(&noisy);
        let f = net.forward_taped(&mut tape, &binding, x_id, None);
        let shift = tape.leaf(&crate::linalg::scale(&eps, 1.0 / sigma));
        let resid = tape.add(f, shift);
        let l = tape.sq_norm(resid);
        acc = Some(match acc {
            None => l,
            Some(a) => tape.add(a, l),
        });
    }
    let mean = tape.scale(acc.unwrap(), 1.0 / batch as f64);
    let loss = tape.scalar(mean);
    let grads = tape.backward(mean);
    Ok((loss, net.grad_flat(&binding, &grads)))
}

/// Implicit score matching `E[∇·F + 0.5 ||F||^2]`, with the divergence
/// taken exactly by one reverse sweep per coordinate. Restricted to d <= 2.
pub fn ism_loss(net: &Mlp, m: &GaussianMixture, batch: usize, rng: &mut Rng) -> Result<f64> {
    let d = m.dim();
    if d > 2 {
        return Err(Error::Unsupported(
            "implicit score matching divergence is exact only for d <= 2".into(),
        ));
    }
    let mut acc = 0.0;
    let mut tape = Tape::new();
    for _ in 0..batch {
        let x = m.sample_one(rng);
        tape.clear();
        let binding = net.bind(&mut tape);
        let x_id = tape.leaf(&x);
        let f = net.forward_taped(&mut tape, &binding, x_id, None);
        let mut div = 0.0;
        for i in 0..d {
            let mut basis = vec![0.0; d];
            basis[i] = 1.0;
            let e_i = tape.leaf(&basis);
            let comp = tape.dot(f, e_i);
            let grads = tape.backward(comp);
            div += grads.wrt(x_id)[i];
        }
        acc += div + 0.5 * norm_sq(tape.value(f));
    }
    Ok(acc / batch as f64)
}

/// One row of the small-time Taylor comparison: the discrepancy at fixed t
/// against its parabola `2 t^2 L_esm`.
#[derive(Debug, Clone, Copy)]
pub struct TaylorRow {
    pub t: f64,
    pub hsd: f64,
    pub hsd_std_error: f64,
    pub taylor: f64,
    pub ratio: f64,
}

/// Tabulate `HSD(t)` against `2 t^2 L_esm` over a time grid.
pub fn taylor_check(
    force: &ForceField,
    m: &GaussianMixture,
    t_grid: &[f64],
    esm_samples: usize,
    cfg: &HsdConfig,
) -> Result<Vec<TaylorRow>> {
    let mut esm_rng = Rng::new(cfg.seed ^ 0x7A11).split(0);
    let l_esm = esm_loss(force, m, esm_samples, &mut esm_rng)?;
    t_grid
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let sub_cfg = HsdConfig {
                lambda: TimeDist::Fixed(t),
                seed: cfg.seed.wrapping_add(i as u64 + 1),
                ..cfg.clone()
            };
            let est = hsd_estimate(force, m, &sub_cfg)?;
            let taylor = 2.0 * t * t * l_esm;
            Ok(TaylorRow {
                t,
                hsd: est.value,
                hsd_std_error: est.std_error,
                taylor,
                ratio: est.value / taylor,
            })
        })
        .collect()
}

/// `-L_hsm(phi | theta)` over one minibatch with the trajectory recorded on
/// a tape, returning the value and its gradient in the force parameters
/// (the velocity net is frozen). This is the force-side objective of the
/// min-max loop: at the inner optimum its value is `E||E[v_t|x_t]||^2 >= 0`.
#[allow(clippy::too_many_arguments)]
pub fn force_objective_grad(
    force_net: &Mlp,
    v_net: &Mlp,
    m: &GaussianMixture,
    lambda: TimeDist,
    horizon: f64,
    n_steps: usize,
    batch: usize,
    rng: &mut Rng,
) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let f_binding = force_net.bind(&mut tape);
    let v_binding = v_net.bind(&mut tape);
    let taped = TapedForce::Learned {
        net: force_net,
        binding: &f_binding,
        time_dependent: false,
    };
    let mut acc = None;
    for _ in 0..batch {
        let t = lambda.draw(horizon, rng);
        let x = m.sample_one(rng);
        let v = rng.normal_vec(m.dim());
        let x0 = tape.leaf(&x);
        let v0 = tape.leaf(&v);
        let (x_t, v_t) = if t == 0.0 {
            (x0, v0)
        } else {
            leapfrog_taped(&mut tape, &taped, x0, v0, 0.0, t, n_steps)?
        };
        let t_id = tape.leaf_scalar(t);
        let pred = v_net.forward_taped(&mut tape, &v_binding, x_t, Some(t_id));
        let cross = tape.dot(pred, v_t);
        let cross2 = tape.scale(cross, 2.0);
        let pred_sq = tape.sq_norm(pred);
        let term = tape.sub(cross2, pred_sq);
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term),
        });
    }
    let mean = tape.scale(acc.unwrap(), 1.0 / batch as f64);
    let value = tape.scalar(mean);
    if !value.is_finite() {
        return Err(Error::TrainingDiverged { iter: 0 });
    }
    let grads = tape.backward(mean);
    Ok((value, force_net.grad_flat(&f_binding, &grads)))
}

/// Per-diagnostic record of a min-max run.
#[derive(Debug, Clone, Copy)]
pub struct HsmDiagnostic {
    pub iter: usize,
    /// Oracle explicit score matching loss of the current force.
    pub esm: f64,
    /// Minibatch `-L_hsm` seen by the force step (discrepancy proxy).
    pub hsd_proxy: f64,
    /// Last inner velocity loss.
    pub v_loss: f64,
}

/// Result of [`train_hsm`].
pub struct HsmRun {
    pub force: Mlp,
    pub velocity: Mlp,
    pub diagnostics: Vec<HsmDiagnostic>,
    pub warnings: Vec<String>,
}

/// Alternating min-max training of `(F_theta, V_phi)`.
///
/// Each outer iteration takes `k_inner` velocity steps (minimizing the
/// velocity loss on trajectories of the frozen force, simulated tape-free)
/// and one force step descending `-L_hsm` through the taped trajectory with
/// the velocity net frozen. ESM against the analytic mixture score is
/// recorded as an oracle diagnostic; stalling ESM raises a warning, not an
/// error.
pub fn train_hsm(
    force_net: Mlp,
    v_net: Mlp,
    m: &GaussianMixture,
    cfg: &HsmConfig,
) -> Result<HsmRun> {
    let mut force_net = force_net;
    let mut v_net = v_net;
    let root = Rng::new(cfg.seed);
    let mut rng = root.split(0);
    let diag_rng_base = root.split(1);

    let mut f_params = force_net.params_flat();
    let mut v_params = v_net.params_flat();
    let mut adam_f = AdamState::new(f_params.len(), cfg.lr_f);
    let mut adam_v = AdamState::new(v_params.len(), cfg.lr_v);
    let mut tape = Tape::new();

    let inner_step = |v_net: &mut Mlp,
                          v_params: &mut Vec<f64>,
                          adam_v: &mut AdamState,
                          force_net: &Mlp,
                          tape: &mut Tape,
                          rng: &mut Rng|
     -> Result<f64> {
        let force = ForceField::Learned { net: force_net.clone(), time_dependent: false };
        tape.clear();
        let binding = v_net.bind(tape);
        let mut acc = None;
        for _ in 0..cfg.batch {
            let t = cfg.lambda.draw(cfg.horizon, rng);
            let x = m.sample_one(rng);
            let v = rng.normal_vec(m.dim());
            let (x_t, v_t) = push_through_flow(&force, x, v, t, cfg.n_steps)?;
            let x_id = tape.leaf(&x_t);
            let t_id = tape.leaf_scalar(t);
            let out = v_net.forward_taped(tape, &binding, x_id, Some(t_id));
            let target = tape.leaf(&v_t);
            let diff = tape.sub(out, target);
            let l = tape.sq_norm(diff);
            acc = Some(match acc {
                None => l,
                Some(a) => tape.add(a, l),
            });
        }
        let mean = tape.scale(acc.unwrap(), 1.0 / cfg.batch as f64);
        let loss = tape.scalar(mean);
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { iter: 0 });
        }
        let grads = tape.backward(mean);
        let grad = v_net.grad_flat(&binding, &grads);
        adam_v.step(v_params, &grad)?;
        v_net.set_params_flat(v_params)?;
        Ok(loss)
    };

    // Let the velocity net catch up before the force starts moving.
    let mut v_loss = f64::NAN;
    for _ in 0..cfg.warmup_inner {
        v_loss = inner_step(&mut v_net, &mut v_params, &mut adam_v, &force_net, &mut tape, &mut rng)?;
    }

    let mut diagnostics = Vec::new();
    let mut warnings = Vec::new();
    let mut best_esm = f64::INFINITY;
    let mut stall = 0usize;

    for iter in 0..cfg.iterations {
        adam_v.lr = cosine_lr(cfg.lr_v, iter, cfg.iterations);
        adam_f.lr = cosine_lr(cfg.lr_f, iter, cfg.iterations);

        for _ in 0..cfg.k_inner {
            v_loss = inner_step(&mut v_net, &mut v_params, &mut adam_v, &force_net, &mut tape, &mut rng)?;
        }

        let (proxy, f_grad) = force_objective_grad(
            &force_net,
            &v_net,
            m,
            cfg.lambda,
            cfg.horizon,
            cfg.n_steps,
            cfg.batch,
            &mut rng,
        )
        .map_err(|e| match e {
            Error::TrainingDiverged { .. } => Error::TrainingDiverged { iter },
            other => other,
        })?;
        adam_f.step(&mut f_params, &f_grad)?;
        force_net.set_params_flat(&f_params)?;

        if iter % cfg.diag_interval == 0 || iter + 1 == cfg.iterations {
            let force = ForceField::Learned { net: force_net.clone(), time_dependent: false };
            let mut diag_rng = diag_rng_base.split(iter as u64);
            let esm = esm_loss(&force, m, 4096, &mut diag_rng)?;
            diagnostics.push(HsmDiagnostic { iter, esm, hsd_proxy: proxy, v_loss });
            if esm < best_esm * (1.0 - 1e-3) {
                best_esm = esm;
                stall = 0;
            } else {
                stall += 1;
                if stall == cfg.patience {
                    let msg = format!(
                        "oracle ESM has not improved for {} diagnostic windows (iter {iter})",
                        cfg.patience
                    );
                    log::warn!("{msg}");
                    warnings.push(msg);
                }
            }
        }
    }

    Ok(HsmRun { force: force_net, velocity: v_net, diagnostics, warnings })
}

/// Fit a score net by denoising score matching. Used both for force-net
/// snapshots in the discrepancy/ESM correlation study and as the baseline
/// smoothed-score learner.
pub fn dsm_fit(
    net: Mlp,
    m: &GaussianMixture,
    sigma: f64,
    iterations: usize,
    batch: usize,
    lr: f64,
    rng: &mut Rng,
) -> Result<Mlp> {
    dsm_fit_averaged(net, m, sigma, iterations, batch, lr, 0.0, rng)
}

/// [`dsm_fit`] with cosine learning-rate decay and an optional Polyak
/// average over the trailing fraction of iterations.
#[allow(clippy::too_many_arguments)]
pub fn dsm_fit_averaged(
    net: Mlp,
    m: &GaussianMixture,
    sigma: f64,
    iterations: usize,
    batch: usize,
    lr: f64,
    tail_average: f64,
    rng: &mut Rng,
) -> Result<Mlp> {
    let mut net = net;
    let mut params = net.params_flat();
    let mut adam = AdamState::new(params.len(), lr);
    let tail_start = if tail_average > 0.0 {
        iterations - ((iterations as f64 * tail_average) as usize).clamp(1, iterations)
    } else {
        usize::MAX
    };
    let mut tail_sum = vec![0.0; params.len()];
    let mut tail_count = 0usize;
    for iter in 0..iterations {
        adam.lr = cosine_lr(lr, iter, iterations);
        let (loss, grad) = dsm_loss_grad(&net, m, sigma, batch, rng)?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { iter });
        }
        adam.step(&mut params, &grad)?;
        net.set_params_flat(&params)?;
        if iter >= tail_start {
            for (s, p) in tail_sum.iter_mut().zip(&params) {
                *s += p;
            }
            tail_count += 1;
        }
    }
    if tail_count > 0 {
        let avg: Vec<f64> = tail_sum.iter().map(|s| s / tail_count as f64).collect();
        net.set_params_flat(&avg)?;
    }
    Ok(net)
}

/// Gradient-noise rows of [`snr_diagnostic`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnrMethod {
    Hsm,
    Dsm,
}

#[derive(Debug, Clone, Copy)]
pub struct SnrRow {
    pub param_id: usize,
    pub method: SnrMethod,
    /// Noise scale: sigma for DSM, trajectory time for HSM.
    pub noise: f64,
    pub mean: f64,
    pub std: f64,
}

/// Per-parameter gradient mean and spread over `n_batches` minibatches at
/// each noise level, for a fixed probe force net and a fixed data seed.
/// For HSM a velocity net is first fitted to the probe force at each time.
#[allow(clippy::too_many_arguments)]
pub fn snr_diagnostic(
    method: SnrMethod,
    probe: &Mlp,
    m: &GaussianMixture,
    noise_grid: &[f64],
    n_batches: usize,
    batch: usize,
    n_steps: usize,
    seed: u64,
) -> Result<Vec<SnrRow>> {
    let root = Rng::new(seed);
    let n_params = probe.param_count();
    let mut rows = Vec::with_capacity(noise_grid.len() * n_params);

    for (gi, &noise) in noise_grid.iter().enumerate() {
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(n_batches);
        match method {
            SnrMethod::Dsm => {
                for b in 0..n_batches {
                    let mut r = root.split((gi * n_batches + b) as u64);
                    let (_, g) = dsm_loss_grad(probe, m, noise, batch, &mut r)?;
                    grads.push(g);
                }
            }
            SnrMethod::Hsm => {
                let force = ForceField::Learned { net: probe.clone(), time_dependent: false };
                let fit_cfg = HsdConfig {
                    lambda: TimeDist::Fixed(noise),
                    horizon: noise.max(1e-3),
                    n_steps,
                    pool: 1 << 14,
                    inner_steps: 800,
                    eval_pairs: 1,
                    seed: seed ^ 0x5A5A ^ gi as u64,
                    ..HsdConfig::default()
                };
                let pool = simulate_triples(
                    &force,
                    m,
                    fit_cfg.lambda,
                    fit_cfg.horizon,
                    n_steps,
                    fit_cfg.pool,
                    &root.split(1_000 + gi as u64),
                )?;
                let mut draw: TripleDraw =
                    Box::new(move |rng: &mut Rng| Ok(vec![pool[rng.next_below(pool.len())].clone()]));
                let mut init_rng = root.split(2_000 + gi as u64);
                let fresh = Mlp::new(
                    MlpConfig::time_conditioned(m.dim(), fit_cfg.v_hidden.clone()),
                    &mut init_rng,
                );
                let mut fit_rng = root.split(3_000 + gi as u64);
                let (v_net, _) = fit_velocity(
                    &mut draw,
                    fresh,
                    fit_cfg.inner_steps,
                    fit_cfg.inner_batch,
                    fit_cfg.inner_lr,
                    fit_cfg.plateau_window,
                    fit_cfg.plateau_rel,
                    fit_cfg.tail_average,
                    &mut fit_rng,
                )?;
                for b in 0..n_batches {
                    let mut r = root.split((gi * n_batches + b) as u64);
                    let (_, g) = force_objective_grad(
                        probe,
                        &v_net,
                        m,
                        TimeDist::Fixed(noise),
                        noise.max(1e-3),
                        n_steps,
                        batch,
                        &mut r,
                    )?;
                    grads.push(g);
                }
            }
        }

        for p in 0..n_params {
            let mut acc = MeanAccumulator::default();
            for g in &grads {
                acc.push(g[p]);
            }
            rows.push(SnrRow {
                param_id: p,
                method,
                noise,
                mean: acc.mean(),
                std: acc.variance().sqrt(),
            });
        }
    }
    Ok(rows)
}

/// Median of `|mean| / std` over parameters with non-degenerate spread.
pub fn median_snr(rows: &[SnrRow], method: SnrMethod, noise: f64) -> f64 {
    let mut ratios: Vec<f64> = rows
        .iter()
        .filter(|r| r.method == method && r.noise == noise && r.std > 1e-300)
        .map(|r| r.mean.abs() / r.std)
        .collect();
    ratios.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    if ratios.is_empty() {
        return f64::NAN;
    }
    ratios[ratios.len() / 2]
}
