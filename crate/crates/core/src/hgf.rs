//! Hamiltonian generative flows: velocity-predictor training for fixed
//! force fields, the closed-form conditional-velocity oracle for linear
//! flows, and the lift that turns any first-order flow into a force field.

use crate::dynamics::{flow_oscillation, flow_reflection, flow_zero, leapfrog, ForceField, PhaseState};
use crate::error::{Error, Result};
use crate::gmm::GaussianMixture;
use crate::linalg::logsumexp;
use crate::metrics::MeanAccumulator;
use crate::net::{AdamState, Mlp, Tape, TapeField};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

/// Flow family: the pairing of a force field with an initial
/// location-velocity distribution and a horizon.
#[derive(Debug, Clone)]
pub enum HgfKind {
    /// Zero force, independent velocities: `x_t = x + t eps`.
    Diffusion,
    /// Zero force with the coupled draw `v = eps - x`.
    FlowMatching,
    /// Harmonic force `-alpha^2 x`; exact rotation flow.
    Oscillation { alpha: f64 },
    /// Free flight in a box with wall reflections.
    Reflection { lo: Vec<f64>, hi: Vec<f64> },
    /// Arbitrary force field integrated by leapfrog.
    Custom { force: ForceField, horizon: f64 },
}

impl HgfKind {
    /// Default training horizon for each family.
    pub fn horizon(&self) -> f64 {
        match self {
            HgfKind::Diffusion => 3.0,
            HgfKind::FlowMatching => 1.0,
            HgfKind::Oscillation { alpha } => std::f64::consts::FRAC_PI_2 / alpha,
            HgfKind::Reflection { .. } => 3.0,
            HgfKind::Custom { horizon, .. } => *horizon,
        }
    }

    pub fn oscillation_for(m: &GaussianMixture) -> Self {
        HgfKind::Oscillation { alpha: m.natural_alpha() }
    }
}

/// Time distribution `lambda` for drawing training times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeDist {
    /// Uniform over `[0, T)`.
    Uniform,
    /// Point mass at a fixed time (diagnostics).
    Fixed(f64),
}

impl TimeDist {
    pub fn draw(&self, horizon: f64, rng: &mut Rng) -> f64 {
        match self {
            TimeDist::Uniform => rng.uniform(0.0, horizon),
            TimeDist::Fixed(t) => *t,
        }
    }
}

/// Velocity-predictor training configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch: usize,
    pub iterations: usize,
    pub lr: f64,
    pub lambda: TimeDist,
    /// Overrides the kind's default horizon when set.
    pub horizon: Option<f64>,
    pub seed: u64,
    /// Leapfrog steps per trajectory for `Custom` kinds.
    pub n_steps: usize,
    /// Draw batches as antithetic pairs sharing the data point with the
    /// Gaussian part negated — both legs are exact draws from the coupled
    /// distribution, so the estimator stays unbiased while the target noise
    /// partially cancels.
    pub antithetic: bool,
    /// Return the Polyak average of the parameters over the trailing
    /// fraction of iterations instead of the last iterate (0 disables).
    pub tail_average: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: 128,
            iterations: 2000,
            lr: 1e-3,
            lambda: TimeDist::Uniform,
            horizon: None,
            seed: 0,
            n_steps: 5,
            antithetic: false,
            tail_average: 0.0,
        }
    }
}

/// Draw `(x, v) ~ Pi`, push it through the kind's flow to time `t`, and
/// return `(x_t, v_t)`; `v_t` is the training target. Reflection data is
/// drawn from the mixture conditioned on the box by rejection.
pub fn sample_pair(
    kind: &HgfKind,
    m: &GaussianMixture,
    rng: &mut Rng,
    t: f64,
    n_steps: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = m.dim();
    match kind {
        HgfKind::Diffusion => {
            let x = m.sample_one(rng);
            let eps = rng.normal_vec(d);
            let s = flow_zero(&PhaseState::new(x, eps)?, t);
            Ok((s.x, s.v))
        }
        HgfKind::FlowMatching => {
            let x = m.sample_one(rng);
            let eps = rng.normal_vec(d);
            let v = crate::linalg::sub(&eps, &x);
            let s = flow_zero(&PhaseState::new(x, v)?, t);
            Ok((s.x, s.v))
        }
        HgfKind::Oscillation { alpha } => {
            let x = m.sample_one(rng);
            let v = rng.normal_vec(d);
            let s = flow_oscillation(&PhaseState::new(x, v)?, t, *alpha);
            Ok((s.x, s.v))
        }
        HgfKind::Reflection { lo, hi } => {
            let x = sample_in_box(m, lo, hi, rng)?;
            let v = rng.normal_vec(d);
            let s = flow_reflection(&PhaseState::new(x, v)?, t, lo, hi)?;
            Ok((s.x, s.v))
        }
        HgfKind::Custom { force, .. } => {
            let x = m.sample_one(rng);
            let v = rng.normal_vec(d);
            let s0 = PhaseState::new(x, v)?;
            if t == 0.0 {
                return Ok((s0.x, s0.v));
            }
            let s = leapfrog(force, &s0, 0.0, t, n_steps)?;
            Ok((s.x, s.v))
        }
    }
}

/// Antithetic twin of [`sample_pair`]: both legs share the data draw, the
/// second negates the Gaussian part. Each leg alone is distributed exactly
/// like a `sample_pair` output.
pub fn sample_pair_antithetic(
    kind: &HgfKind,
    m: &GaussianMixture,
    rng: &mut Rng,
    t: f64,
    n_steps: usize,
) -> Result<[(Vec<f64>, Vec<f64>); 2]> {
    let d = m.dim();
    let (x, gauss) = match kind {
        HgfKind::Reflection { lo, hi } => (sample_in_box(m, lo, hi, rng)?, rng.normal_vec(d)),
        _ => (m.sample_one(rng), rng.normal_vec(d)),
    };
    let legs = [gauss.clone(), crate::linalg::scale(&gauss, -1.0)];
    let mut out = Vec::with_capacity(2);
    for eps in legs {
        let s0 = match kind {
            HgfKind::FlowMatching => {
                PhaseState::new(x.clone(), crate::linalg::sub(&eps, &x))?
            }
            _ => PhaseState::new(x.clone(), eps)?,
        };
        let s = match kind {
            HgfKind::Diffusion | HgfKind::FlowMatching => flow_zero(&s0, t),
            HgfKind::Oscillation { alpha } => flow_oscillation(&s0, t, *alpha),
            HgfKind::Reflection { lo, hi } => flow_reflection(&s0, t, lo, hi)?,
            HgfKind::Custom { force, .. } => {
                if t == 0.0 {
                    s0
                } else {
                    leapfrog(force, &s0, 0.0, t, n_steps)?
                }
            }
        };
        out.push((s.x, s.v));
    }
    Ok([out.remove(0), out.remove(0)])
}

/// Rejection-sample the mixture conditioned on the box.
pub fn sample_in_box(
    m: &GaussianMixture,
    lo: &[f64],
    hi: &[f64],
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    for _ in 0..10_000 {
        let x = m.sample_one(rng);
        if x.iter().zip(lo).zip(hi).all(|((&xi, &l), &h)| xi >= l && xi <= h) {
            return Ok(x);
        }
    }
    Err(Error::invalid(
        "mixture places almost no mass inside the reflection box",
    ))
}

/// Result of velocity-predictor training.
pub struct TrainedHvp {
    pub net: Mlp,
    /// Minibatch loss per iteration.
    pub losses: Vec<f64>,
}

/// Minimize the Monte-Carlo velocity-prediction loss
/// `E ||V(x_t, t) - v_t||^2` over the network parameters with Adam.
///
/// The learning rate follows a cosine decay from `lr` to `lr / 20` across
/// the run. Deterministic for a fixed config and seed.
pub fn train_hvp(
    kind: &HgfKind,
    m: &GaussianMixture,
    net: Mlp,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainedHvp> {
    let mut net = net;
    let horizon = cfg.horizon.unwrap_or_else(|| kind.horizon());
    let mut params = net.params_flat();
    let mut adam = AdamState::new(params.len(), cfg.lr);
    let mut losses = Vec::with_capacity(cfg.iterations);
    let mut tape = Tape::new();

    let tail_start = if cfg.tail_average > 0.0 {
        cfg.iterations - ((cfg.iterations as f64 * cfg.tail_average) as usize).clamp(1, cfg.iterations)
    } else {
        usize::MAX
    };
    let mut tail_sum = vec![0.0; params.len()];
    let mut tail_count = 0usize;

    for iter in 0..cfg.iterations {
        adam.lr = cosine_lr(cfg.lr, iter, cfg.iterations);
        tape.clear();
        let binding = net.bind(&mut tape);
        let mut acc = None;
        let mut push_term = |tape: &mut Tape, x_t: &[f64], t: f64, v_t: &[f64], net: &Mlp| {
            let x_id = tape.leaf(x_t);
            let t_id = tape.leaf_scalar(t);
            let out = net.forward_taped(tape, &binding, x_id, Some(t_id));
            let target = tape.leaf(v_t);
            let diff = tape.sub(out, target);
            let l = tape.sq_norm(diff);
            acc = Some(match acc {
                None => l,
                Some(a) => tape.add(a, l),
            });
        };
        let mut drawn = 0usize;
        while drawn < cfg.batch {
            let t = cfg.lambda.draw(horizon, rng);
            if cfg.antithetic && drawn + 2 <= cfg.batch {
                let pair = sample_pair_antithetic(kind, m, rng, t, cfg.n_steps)?;
                for (x_t, v_t) in &pair {
                    push_term(&mut tape, x_t, t, v_t, &net);
                }
                drawn += 2;
            } else {
                let (x_t, v_t) = sample_pair(kind, m, rng, t, cfg.n_steps)?;
                push_term(&mut tape, &x_t, t, &v_t, &net);
                drawn += 1;
            }
        }
        let mean = tape.scale(acc.unwrap(), 1.0 / cfg.batch as f64);
        let loss = tape.scalar(mean);
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { iter });
        }
        losses.push(loss);

        let grads = tape.backward(mean);
        let grad = net.grad_flat(&binding, &grads);
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
    Ok(TrainedHvp { net, losses })
}

pub(crate) fn cosine_lr(peak: f64, iter: usize, total: usize) -> f64 {
    if total <= 1 {
        return peak;
    }
    let floor = peak / 20.0;
    let phase = std::f64::consts::PI * iter as f64 / (total - 1) as f64;
    floor + 0.5 * (peak - floor) * (1.0 + phase.cos())
}

/// Linear-flow coefficients `(x_t, v_t) = (a x + b v, c x + d v)`.
fn linear_flow_coeffs(kind: &HgfKind, t: f64) -> Result<(f64, f64, f64, f64)> {
    match kind {
        HgfKind::Diffusion => Ok((1.0, t, 0.0, 1.0)),
        HgfKind::Oscillation { alpha } => {
            let (sin, cos) = (alpha * t).sin_cos();
            Ok((cos, sin / alpha, -alpha * sin, cos))
        }
        _ => Err(Error::Unsupported(
            "analytic conditional velocity needs a linear uncoupled flow".into(),
        )),
    }
}

/// Exact `E[v_t | x_t = x]` for linear flows over a Gaussian mixture.
///
/// Per component the pair `(x_t, v_t)` is jointly Gaussian, so the
/// conditional mean is `c mu_i + (a c sigma_i^2 + b d) / (a^2 sigma_i^2 + b^2)
/// (x - a mu_i)`, mixed with posterior weights
/// `w_i(x) ∝ w_i N(x; a mu_i, (a^2 sigma_i^2 + b^2) I)`.
pub fn analytic_hvp(kind: &HgfKind, m: &GaussianMixture, x: &[f64], t: f64) -> Result<Vec<f64>> {
    Error::check_dim(m.dim(), x.len())?;
    let (a, b, c, d) = linear_flow_coeffs(kind, t)?;
    let dim = m.dim() as f64;

    let mut log_w = Vec::with_capacity(m.n_components());
    for ((&w, mu), &var) in m.weights().iter().zip(m.means()).zip(m.variances()) {
        let s2 = a * a * var + b * b;
        if s2 <= 0.0 {
            return Err(Error::DegenerateConditioning { t });
        }
        let quad: f64 = x
            .iter()
            .zip(mu)
            .map(|(&xi, &mi)| (xi - a * mi) * (xi - a * mi))
            .sum();
        let logw = if w > 0.0 { w.ln() } else { f64::NEG_INFINITY };
        log_w.push(logw - 0.5 * (quad / s2 + dim * (s2.ln() + crate::gmm::LN_2PI)));
    }
    let lse = logsumexp(&log_w);

    let mut out = vec![0.0; m.dim()];
    for (i, (mu, &var)) in m.means().iter().zip(m.variances()).enumerate() {
        let r = (log_w[i] - lse).exp();
        let s2 = a * a * var + b * b;
        let gain = (a * c * var + b * d) / s2;
        for (o, (&xi, &mi)) in out.iter_mut().zip(x.iter().zip(mu)) {
            *o += r * (c * mi + gain * (xi - a * mi));
        }
    }
    Ok(out)
}

/// Force-field lift of a first-order vector field:
/// `F(x, t) = D_x A(x, t) A(x, t) + d/dt A(x, t)`, with the Jacobian rows
/// obtained by one reverse sweep per output component.
pub fn fm_force_lift(field: &dyn TapeField, x: &[f64], t: f64) -> Vec<f64> {
    let d = field.dim();
    let mut tape = Tape::new();
    let x_id = tape.leaf(x);
    let t_id = tape.leaf_scalar(t);
    let out = field.record(&mut tape, x_id, t_id);
    let a_val = tape.value(out).to_vec();

    let mut force = Vec::with_capacity(d);
    for i in 0..d {
        let mut basis = vec![0.0; d];
        basis[i] = 1.0;
        let e_i = tape.leaf(&basis);
        let comp = tape.dot(out, e_i);
        let grads = tape.backward(comp);
        let row = grads.wrt(x_id);
        let dt = grads.wrt(t_id)[0];
        force.push(crate::linalg::dot(row, &a_val) + dt);
    }
    force
}

/// Worst-case gaps between the diffusion velocity loss and a directly-coded
/// denoising score-matching loss on shared draws.
#[derive(Debug, Clone, Copy)]
pub struct DsmEquivalence {
    pub max_loss_gap: f64,
    pub max_grad_gap: f64,
}

/// Per-sample check that the diffusion velocity loss equals denoising score
/// matching with score model `s(y) = -V(y, t) / t` at noise `sigma = t`.
///
/// Route A records `||V(x + t eps, t) - eps||^2`; route B records
/// `t^2 ||s(x + t eps) + eps / t||^2` through the explicit score-model
/// wrapper. Values and parameter gradients must agree to rounding on every
/// draw; both relative gaps are returned.
pub fn diffusion_dsm_equivalence(
    v_net: &Mlp,
    m: &GaussianMixture,
    draws: usize,
    rng: &mut Rng,
) -> Result<DsmEquivalence> {
    let mut max_loss_gap = 0.0f64;
    let mut max_grad_gap = 0.0f64;
    let mut tape_a = Tape::new();
    let mut tape_b = Tape::new();
    for _ in 0..draws {
        let x = m.sample_one(rng);
        let eps = rng.normal_vec(m.dim());
        let t = rng.uniform(0.1, 3.0);
        let noisy = crate::linalg::axpy(&x, t, &eps);

        // Route A: velocity-prediction form.
        tape_a.clear();
        let binding_a = v_net.bind(&mut tape_a);
        let x_id = tape_a.leaf(&noisy);
        let t_id = tape_a.leaf_scalar(t);
        let pred = v_net.forward_taped(&mut tape_a, &binding_a, x_id, Some(t_id));
        let target = tape_a.leaf(&eps);
        let diff = tape_a.sub(pred, target);
        let loss_a_id = tape_a.sq_norm(diff);
        let loss_a = tape_a.scalar(loss_a_id);
        let grad_a = v_net.grad_flat(&binding_a, &tape_a.backward(loss_a_id));

        // Route B: denoising form with the -V/t score model, rescaled by
        // the sigma^2 = t^2 weight.
        tape_b.clear();
        let binding_b = v_net.bind(&mut tape_b);
        let x_id = tape_b.leaf(&noisy);
        let t_id = tape_b.leaf_scalar(t);
        let pred = v_net.forward_taped(&mut tape_b, &binding_b, x_id, Some(t_id));
        let score_model = tape_b.scale(pred, -1.0 / t);
        let shift = tape_b.leaf(&crate::linalg::scale(&eps, 1.0 / t));
        let resid = tape_b.add(score_model, shift);
        let dsm = tape_b.sq_norm(resid);
        let loss_b_id = tape_b.scale(dsm, t * t);
        let loss_b = tape_b.scalar(loss_b_id);
        let grad_b = v_net.grad_flat(&binding_b, &tape_b.backward(loss_b_id));

        max_loss_gap = max_loss_gap.max((loss_a - loss_b).abs() / loss_a.abs().max(1.0));
        for (a, b) in grad_a.iter().zip(&grad_b) {
            max_grad_gap = max_grad_gap.max((a - b).abs() / a.abs().max(1.0));
        }
    }
    Ok(DsmEquivalence { max_loss_gap, max_grad_gap })
}

/// Monte-Carlo estimate of one squared scale with its standard error.
#[derive(Debug, Clone, Copy)]
pub struct ScaleEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// The three derivative scales of the oscillation flow at time `t`:
/// `E||x_t||^2`, `E||v_t||^2 = E||d/dt x_t||^2`, and `E||d^2/dt^2 x_t||^2`.
#[derive(Debug, Clone, Copy)]
pub struct ConstantScaleCheck {
    pub location: ScaleEstimate,
    pub velocity: ScaleEstimate,
    pub acceleration: ScaleEstimate,
}

/// Monte-Carlo scales of the oscillation flow; with
/// `alpha = sqrt(d / E||x||^2)` they are time-independent.
pub fn constant_scale_check(
    m: &GaussianMixture,
    alpha: f64,
    t: f64,
    n: usize,
    rng: &mut Rng,
) -> Result<ConstantScaleCheck> {
    if alpha <= 0.0 {
        return Err(Error::invalid("alpha must be positive"));
    }
    let mut loc = MeanAccumulator::default();
    let mut vel = MeanAccumulator::default();
    let mut acc = MeanAccumulator::default();
    for _ in 0..n {
        let x = m.sample_one(rng);
        let v = rng.normal_vec(m.dim());
        let s = flow_oscillation(&PhaseState::new(x, v)?, t, alpha);
        loc.push(crate::linalg::norm_sq(&s.x));
        vel.push(crate::linalg::norm_sq(&s.v));
        // Acceleration along the flow is the harmonic force -alpha^2 x_t.
        acc.push(alpha.powi(4) * crate::linalg::norm_sq(&s.x));
    }
    let est = |m: &MeanAccumulator| ScaleEstimate { mean: m.mean(), std_error: m.std_error() };
    Ok(ConstantScaleCheck {
        location: est(&loc),
        velocity: est(&vel),
        acceleration: est(&acc),
    })
}
