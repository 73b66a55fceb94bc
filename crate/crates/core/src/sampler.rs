//! Backward integration of the velocity-predictor ODE.
//!
//! Sampling draws the terminal location marginal and integrates
//! `dx/dt = V(x, t)` backward to t = 0 with a second-order Heun scheme.
//! Analytic predictors integrate to exactly zero; learned predictors stop
//! at a small floor and take the final step with Euler, since the corrector
//! would otherwise query the predictor at the untrained corner.

use crate::error::{Error, Result};
use crate::gmm::GaussianMixture;
use crate::hgf::{analytic_hvp, HgfKind};
use crate::linalg;
use crate::net::Mlp;
use crate::rng::Rng;
use rayon::prelude::*;

/// Velocity field consumed by the backward integrator.
pub trait VelocityPredictor: Sync {
    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>>;
}

/// The closed-form conditional velocity of a linear flow over a mixture.
pub struct AnalyticHvp<'a> {
    pub kind: HgfKind,
    pub mixture: &'a GaussianMixture,
}

impl VelocityPredictor for AnalyticHvp<'_> {
    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        analytic_hvp(&self.kind, self.mixture, x, t)
    }
}

/// A trained velocity net.
pub struct NetPredictor<'a>(pub &'a Mlp);

impl VelocityPredictor for NetPredictor<'_> {
    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.0.forward(x, Some(t))
    }
}

/// Zero field: backward integration returns the terminal draws unchanged.
pub struct ZeroPredictor(pub usize);

impl VelocityPredictor for ZeroPredictor {
    fn velocity(&self, _x: &[f64], _t: f64) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.0])
    }
}

/// Drift of the probability-flow ODE in its plain noise parameterization
/// (`s = 1`, `sigma(t) = t`): `V(x, t) = -t ∇ log pi_t(x)` with the
/// analytically smoothed mixture score.
pub struct SmoothedScoreDrift<'a>(pub &'a GaussianMixture);

impl VelocityPredictor for SmoothedScoreDrift<'_> {
    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let score = self.0.smoothed(t).score(x)?;
        Ok(linalg::scale(&score, -t))
    }
}

/// Terminal-distribution specification.
#[derive(Debug, Clone)]
pub enum TerminalDist {
    /// `N(0, variance I)`.
    Gaussian { variance: f64 },
    /// Uniform on a box.
    BoxUniform { lo: Vec<f64>, hi: Vec<f64> },
}

/// Time grid plus terminal sampler for one flow family.
#[derive(Debug, Clone)]
pub struct Schedule {
    /// Strictly decreasing; integration runs from `grid[0]` to the end.
    pub grid: Vec<f64>,
    pub terminal: TerminalDist,
    pub dim: usize,
    /// Take the final step with Euler instead of the trapezoidal corrector.
    pub euler_final: bool,
}

impl Schedule {
    pub fn new(grid: Vec<f64>, terminal: TerminalDist, dim: usize, euler_final: bool) -> Result<Self> {
        if grid.len() < 2 || grid.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid("schedule grid must be strictly decreasing"));
        }
        Ok(Schedule { grid, terminal, dim, euler_final })
    }

    /// Uniform grid from `horizon` down to `t_min` with `steps` intervals;
    /// terminal `N(0, sigma(T)^2 I) = N(0, T^2 I)`. The Gaussian terminal of
    /// diffusion is an approximation; see [`Schedule::terminal_variance_gap`].
    pub fn diffusion(m: &GaussianMixture, horizon: f64, steps: usize, t_min: f64) -> Result<Self> {
        let grid = uniform_grid(horizon, t_min, steps)?;
        Schedule::new(
            grid,
            TerminalDist::Gaussian { variance: horizon * horizon },
            m.dim(),
            t_min > 0.0,
        )
    }

    /// Uniform grid from 1 down to `t_min`; exact terminal `N(0, I)`.
    pub fn flow_matching(m: &GaussianMixture, steps: usize, t_min: f64) -> Result<Self> {
        let grid = uniform_grid(1.0, t_min, steps)?;
        Schedule::new(grid, TerminalDist::Gaussian { variance: 1.0 }, m.dim(), t_min > 0.0)
    }

    /// Polynomially spaced noise grid mapped through `t = arctan(alpha
    /// sigma) / alpha`, starting exactly at the quarter period `T = pi /
    /// (2 alpha)` where the terminal is exactly `N(0, I / alpha^2)`, and
    /// ending at `t_min` (zero for analytic predictors).
    pub fn oscillation(
        m: &GaussianMixture,
        alpha: f64,
        steps: usize,
        t_min: f64,
    ) -> Result<Self> {
        if alpha <= 0.0 {
            return Err(Error::invalid("alpha must be positive"));
        }
        if steps < 3 {
            return Err(Error::invalid("oscillation schedule needs at least 3 steps"));
        }
        let horizon = std::f64::consts::FRAC_PI_2 / alpha;
        let sigmas = edm_sigma_grid(steps - 1, 2e-3, 80.0, 7.0)?;
        let mut grid = Vec::with_capacity(steps + 1);
        grid.push(horizon);
        for s in sigmas {
            grid.push((alpha * s).atan() / alpha);
        }
        grid.push(t_min);
        // Guard against duplicate endpoints when t_min is close to the last
        // mapped node.
        grid.dedup_by(|a, b| *a >= *b);
        Schedule::new(
            grid,
            TerminalDist::Gaussian { variance: 1.0 / (alpha * alpha) },
            m.dim(),
            t_min > 0.0,
        )
    }

    /// Uniform grid from `horizon` down to `t_min`; exact uniform terminal.
    pub fn reflection(
        lo: Vec<f64>,
        hi: Vec<f64>,
        horizon: f64,
        steps: usize,
        t_min: f64,
    ) -> Result<Self> {
        let dim = lo.len();
        let grid = uniform_grid(horizon, t_min, steps)?;
        Schedule::new(grid, TerminalDist::BoxUniform { lo, hi }, dim, t_min > 0.0)
    }

    /// Gap between the schedule's Gaussian terminal variance and the true
    /// per-dimension terminal variance of the kind's forward flow — the
    /// known approximation error of diffusion terminals. Exact terminals
    /// report zero.
    pub fn terminal_variance_gap(&self, kind: &HgfKind, m: &GaussianMixture) -> f64 {
        match (&self.terminal, kind) {
            (TerminalDist::Gaussian { variance }, HgfKind::Diffusion) => {
                let t = self.grid[0];
                let d = m.dim() as f64;
                let mean = m.mean();
                let true_var = (m.second_moment() - linalg::norm_sq(&mean)) / d + t * t;
                (true_var - variance).abs()
            }
            _ => 0.0,
        }
    }
}

fn uniform_grid(from: f64, to: f64, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 || to >= from {
        return Err(Error::invalid("grid needs from > to and steps >= 1"));
    }
    Ok((0..=steps)
        .map(|i| from + (to - from) * i as f64 / steps as f64)
        .collect())
}

/// The descending noise grid of the polynomial schedule
/// `sigma_i = (sigma_max^(1/rho) + i/(n-1) (sigma_min^(1/rho) -
/// sigma_max^(1/rho)))^rho`.
pub fn edm_sigma_grid(n: usize, sigma_min: f64, sigma_max: f64, rho: f64) -> Result<Vec<f64>> {
    if sigma_min <= 0.0 || sigma_max <= sigma_min || n < 2 {
        return Err(Error::invalid("noise grid needs 0 < sigma_min < sigma_max, n >= 2"));
    }
    let a = sigma_max.powf(1.0 / rho);
    let b = sigma_min.powf(1.0 / rho);
    Ok((0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).powf(rho))
        .collect())
}

/// Map a descending noise grid onto oscillation times: `t_i = arctan(sigma_i)`
/// for unit frequency, so the rotation-frame ODE sees the score at the same
/// effective noise levels as the plain `sigma(t) = t` parameterization.
pub fn edm_time_grid(sigmas: &[f64]) -> Result<Vec<f64>> {
    if sigmas.iter().any(|&s| s <= 0.0) {
        return Err(Error::invalid("noise levels must be positive"));
    }
    Ok(sigmas.iter().map(|&s| s.atan()).collect())
}

/// Integrate one trajectory of `dx/dt = V(x, t)` backward along the grid.
pub fn integrate_backward(
    predictor: &dyn VelocityPredictor,
    grid: &[f64],
    x_init: &[f64],
    euler_final: bool,
) -> Result<Vec<f64>> {
    let mut x = x_init.to_vec();
    for (step, w) in grid.windows(2).enumerate() {
        let (t0, t1) = (w[0], w[1]);
        let h = t1 - t0;
        let d1 = predictor.velocity(&x, t0)?;
        let x_pred = linalg::axpy(&x, h, &d1);
        let last = step + 2 == grid.len();
        if last && euler_final {
            x = x_pred;
        } else {
            let d2 = predictor.velocity(&x_pred, t1)?;
            let avg: Vec<f64> = d1.iter().zip(&d2).map(|(a, b)| 0.5 * (a + b)).collect();
            x = linalg::axpy(&x, h, &avg);
        }
        if !linalg::all_finite(&x) || linalg::norm_sq(&x) > 1e12 {
            return Err(Error::Diverged { step });
        }
    }
    Ok(x)
}

/// Draw one terminal point.
fn draw_terminal(terminal: &TerminalDist, dim: usize, rng: &mut Rng) -> Vec<f64> {
    match terminal {
        TerminalDist::Gaussian { variance } => {
            let sd = variance.sqrt();
            (0..dim).map(|_| sd * rng.normal()).collect()
        }
        TerminalDist::BoxUniform { lo, hi } => lo
            .iter()
            .zip(hi)
            .map(|(&l, &h)| rng.uniform(l, h))
            .collect(),
    }
}

/// Draw `n` terminal points.
pub fn terminal_sample(sched: &Schedule, rng: &mut Rng, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| draw_terminal(&sched.terminal, sched.dim, rng))
        .collect()
}

/// Draw `n` terminal points and integrate each backward. Trajectories run
/// on independent split RNG streams, so the sample set is identical for any
/// worker count.
pub fn heun_sample(
    predictor: &dyn VelocityPredictor,
    sched: &Schedule,
    rng: &Rng,
    n: usize,
) -> Result<Vec<Vec<f64>>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.split(i);
            let x_t = draw_terminal(&sched.terminal, sched.dim, &mut r);
            integrate_backward(predictor, &sched.grid, &x_t, sched.euler_final)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_predictor_returns_terminal_draws() {
        let m = GaussianMixture::standard_1d();
        let sched = Schedule::diffusion(&m, 3.0, 16, 0.0).unwrap();
        let rng = Rng::new(5);
        let samples = heun_sample(&ZeroPredictor(1), &sched, &rng, 256).unwrap();
        let check = rng.clone();
        for (i, s) in samples.iter().enumerate() {
            let mut r = check.split(i as u64);
            let expected = draw_terminal(&sched.terminal, 1, &mut r);
            assert_eq!(s, &expected);
        }
    }

    #[test]
    fn arctan_grid_endpoints() {
        let grid = edm_time_grid(&[1.0]).unwrap();
        assert_relative_eq!(grid[0], std::f64::consts::FRAC_PI_4, epsilon = 1e-15);
        let tiny = edm_time_grid(&[1e-9]).unwrap();
        assert!(tiny[0] > 0.0 && tiny[0] < 1.1e-9);
        assert!(edm_time_grid(&[0.0]).is_err());
    }

    #[test]
    fn sigma_grid_is_descending_with_endpoints() {
        let g = edm_sigma_grid(32, 0.002, 80.0, 7.0).unwrap();
        assert_relative_eq!(g[0], 80.0, epsilon = 1e-9);
        assert_relative_eq!(g[31], 0.002, epsilon = 1e-12);
        assert!(g.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn oscillation_terminal_is_exact_gaussian() {
        let m = GaussianMixture::bimodal_1d();
        let alpha = m.natural_alpha();
        let sched = Schedule::oscillation(&m, alpha, 32, 0.0).unwrap();
        match sched.terminal {
            TerminalDist::Gaussian { variance } => {
                assert_relative_eq!(variance, 1.0 / (alpha * alpha), epsilon = 1e-12);
            }
            _ => panic!("expected Gaussian terminal"),
        }
        assert_relative_eq!(sched.grid[0], std::f64::consts::FRAC_PI_2 / alpha, epsilon = 1e-12);
        assert_eq!(*sched.grid.last().unwrap(), 0.0);
        assert!(sched.grid.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn diffusion_terminal_gap_is_reported() {
        let m = GaussianMixture::bimodal_1d();
        let sched = Schedule::diffusion(&m, 3.0, 16, 0.0).unwrap();
        // Var(x) = 5 - 0.16 = 4.84; approximation uses T^2 = 9.
        let gap = sched.terminal_variance_gap(&HgfKind::Diffusion, &m);
        assert_relative_eq!(gap, 4.84, epsilon = 1e-12);

        let alpha = m.natural_alpha();
        let osc = Schedule::oscillation(&m, alpha, 16, 0.0).unwrap();
        assert_eq!(osc.terminal_variance_gap(&HgfKind::Oscillation { alpha }, &m), 0.0);
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = GaussianMixture::bimodal_1d();
        let alpha = m.natural_alpha();
        let sched = Schedule::oscillation(&m, alpha, 16, 0.0).unwrap();
        let predictor = AnalyticHvp { kind: HgfKind::Oscillation { alpha }, mixture: &m };
        let a = heun_sample(&predictor, &sched, &Rng::new(3), 64).unwrap();
        let b = heun_sample(&predictor, &sched, &Rng::new(3), 64).unwrap();
        assert_eq!(a, b);
    }
}
