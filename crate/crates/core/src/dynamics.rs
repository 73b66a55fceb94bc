//! Hamiltonian phase-space flows.
//!
//! Closed-form flows are used wherever they exist (zero force, harmonic
//! force, box reflections); everything else goes through a kick-drift-kick
//! leapfrog, optionally recorded on a tape so trajectory endpoints can be
//! differentiated with respect to learned force parameters and the initial
//! state.

use crate::error::{Error, Result};
use crate::gmm::GaussianMixture;
use crate::linalg::{self, axpy, norm_sq};
use crate::net::{Mlp, MlpBinding, NodeId, Tape};

/// Guard bound: a trajectory whose position or velocity norm exceeds this is
/// reported as diverged.
pub const DIVERGENCE_BOUND: f64 = 1e6;

/// A `(position, velocity)` pair in `R^d x R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl PhaseState {
    pub fn new(x: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        Error::check_dim(x.len(), v.len())?;
        Ok(PhaseState { x, v })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    fn is_bounded(&self) -> bool {
        linalg::all_finite(&self.x)
            && linalg::all_finite(&self.v)
            && norm_sq(&self.x) < DIVERGENCE_BOUND * DIVERGENCE_BOUND
            && norm_sq(&self.v) < DIVERGENCE_BOUND * DIVERGENCE_BOUND
    }
}

/// Force field `F(x, t)` driving a PH-ODE.
#[derive(Debug, Clone)]
pub enum ForceField {
    Zero,
    /// Harmonic force `-alpha^2 x`.
    Oscillation { alpha: f64 },
    /// The analytic mixture score `∇ log pi`.
    AnalyticScore(GaussianMixture),
    /// A network force; `time_dependent` decides whether `t` is fed in.
    Learned { net: Mlp, time_dependent: bool },
}

impl ForceField {
    pub fn oscillation(alpha: f64) -> Result<Self> {
        if alpha <= 0.0 {
            return Err(Error::invalid("oscillation frequency must be positive"));
        }
        Ok(ForceField::Oscillation { alpha })
    }

    pub fn eval(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        match self {
            ForceField::Zero => Ok(vec![0.0; x.len()]),
            ForceField::Oscillation { alpha } => Ok(linalg::scale(x, -alpha * alpha)),
            ForceField::AnalyticScore(m) => m.score(x),
            ForceField::Learned { net, time_dependent } => {
                net.forward(x, time_dependent.then_some(t))
            }
        }
    }

    /// Potential `U(x)`; `None` for learned fields, which have no potential.
    pub fn potential(&self, x: &[f64]) -> Result<Option<f64>> {
        match self {
            ForceField::Zero => Ok(Some(0.0)),
            ForceField::Oscillation { alpha } => Ok(Some(0.5 * alpha * alpha * norm_sq(x))),
            ForceField::AnalyticScore(m) => Ok(Some(-m.log_density(x)?)),
            ForceField::Learned { .. } => Ok(None),
        }
    }

    fn is_time_dependent(&self) -> bool {
        matches!(self, ForceField::Learned { time_dependent: true, .. })
    }
}

/// Free flight: `(x + t v, v)`.
pub fn flow_zero(s: &PhaseState, t: f64) -> PhaseState {
    PhaseState { x: axpy(&s.x, t, &s.v), v: s.v.clone() }
}

/// Harmonic rotation
/// `(cos(alpha t) x + sin(alpha t)/alpha v, -alpha sin(alpha t) x + cos(alpha t) v)`.
pub fn flow_oscillation(s: &PhaseState, t: f64, alpha: f64) -> PhaseState {
    let (sin, cos) = (alpha * t).sin_cos();
    let x = s
        .x
        .iter()
        .zip(&s.v)
        .map(|(x, v)| cos * x + sin / alpha * v)
        .collect();
    let v = s
        .x
        .iter()
        .zip(&s.v)
        .map(|(x, v)| -alpha * sin * x + cos * v)
        .collect();
    PhaseState { x, v }
}

/// Free flight folded into `[lo, hi]^d` by the billiard (triangle-wave) map.
/// Velocity sign flips with reflection parity. Closed form, simulation-free.
pub fn flow_reflection(s: &PhaseState, t: f64, lo: &[f64], hi: &[f64]) -> Result<PhaseState> {
    Error::check_dim(s.dim(), lo.len())?;
    Error::check_dim(s.dim(), hi.len())?;
    let mut x = Vec::with_capacity(s.dim());
    let mut v = Vec::with_capacity(s.dim());
    for i in 0..s.dim() {
        let (l, h) = (lo[i], hi[i]);
        if h <= l {
            return Err(Error::invalid("reflection box must have positive extent"));
        }
        if s.x[i] < l || s.x[i] > h {
            return Err(Error::invalid(format!(
                "position {} outside box [{l}, {h}] in coordinate {i}",
                s.x[i]
            )));
        }
        let period = 2.0 * (h - l);
        let q = (s.x[i] + t * s.v[i] - l).rem_euclid(period);
        if q <= h - l {
            x.push(l + q);
            v.push(s.v[i]);
        } else {
            x.push(l + (period - q));
            v.push(-s.v[i]);
        }
    }
    Ok(PhaseState { x, v })
}

/// Kick-drift-kick leapfrog from `t0` to `t1` in `n_steps` equal steps.
///
/// Kicks of a time-dependent force are evaluated at the step midpoint time,
/// which keeps second-order accuracy; for autonomous forces the closing kick
/// of one step and the opening kick of the next share a single evaluation.
pub fn leapfrog(
    force: &ForceField,
    s: &PhaseState,
    t0: f64,
    t1: f64,
    n_steps: usize,
) -> Result<PhaseState> {
    if n_steps == 0 {
        return Err(Error::invalid("leapfrog needs at least one step"));
    }
    if t1 <= t0 {
        return Err(Error::invalid("leapfrog requires t1 > t0"));
    }
    let h = (t1 - t0) / n_steps as f64;
    let time_dep = force.is_time_dependent();

    let mut x = s.x.clone();
    let mut v = s.v.clone();
    let mut f = force.eval(&x, t0 + 0.5 * h)?;
    for step in 0..n_steps {
        let t_mid = t0 + (step as f64 + 0.5) * h;
        if time_dep && step > 0 {
            f = force.eval(&x, t_mid)?;
        }
        let v_half = axpy(&v, 0.5 * h, &f);
        x = axpy(&x, h, &v_half);
        f = force.eval(&x, t_mid)?;
        v = axpy(&v_half, 0.5 * h, &f);
        let state = PhaseState { x: x.clone(), v: v.clone() };
        if !state.is_bounded() {
            return Err(Error::Diverged { step });
        }
    }
    Ok(PhaseState { x, v })
}

/// Force fields that can be recorded on a tape. Analytic mixture scores are
/// excluded: their trajectories are simulated tape-free and entered as
/// constants where needed.
pub enum TapedForce<'a> {
    Zero,
    Oscillation { alpha: f64 },
    Learned { net: &'a Mlp, binding: &'a MlpBinding, time_dependent: bool },
}

impl TapedForce<'_> {
    fn eval(&self, tape: &mut Tape, x: NodeId, t: f64) -> NodeId {
        match self {
            TapedForce::Zero => {
                let dim = tape.value(x).len();
                tape.leaf(&vec![0.0; dim])
            }
            TapedForce::Oscillation { alpha } => tape.scale(x, -alpha * alpha),
            TapedForce::Learned { net, binding, time_dependent } => {
                let t_id = time_dependent.then(|| tape.leaf_scalar(t));
                net.forward_taped(tape, binding, x, t_id)
            }
        }
    }

    fn is_time_dependent(&self) -> bool {
        matches!(self, TapedForce::Learned { time_dependent: true, .. })
    }
}

/// Leapfrog recorded on a tape; same scheme as [`leapfrog`]. Returns the
/// endpoint `(x, v)` nodes, differentiable with respect to learned force
/// parameters and the initial-state nodes.
pub fn leapfrog_taped(
    tape: &mut Tape,
    force: &TapedForce,
    x0: NodeId,
    v0: NodeId,
    t0: f64,
    t1: f64,
    n_steps: usize,
) -> Result<(NodeId, NodeId)> {
    if n_steps == 0 {
        return Err(Error::invalid("leapfrog needs at least one step"));
    }
    if t1 <= t0 {
        return Err(Error::invalid("leapfrog requires t1 > t0"));
    }
    let h = (t1 - t0) / n_steps as f64;
    let time_dep = force.is_time_dependent();

    let mut x = x0;
    let mut v = v0;
    let mut f = force.eval(tape, x, t0 + 0.5 * h);
    for step in 0..n_steps {
        let t_mid = t0 + (step as f64 + 0.5) * h;
        if time_dep && step > 0 {
            f = force.eval(tape, x, t_mid);
        }
        let v_half = tape.add_scaled(v, f, 0.5 * h);
        x = tape.add_scaled(x, v_half, h);
        f = force.eval(tape, x, t_mid);
        v = tape.add_scaled(v_half, f, 0.5 * h);
        if !linalg::all_finite(tape.value(x)) || !linalg::all_finite(tape.value(v)) {
            return Err(Error::Diverged { step });
        }
    }
    Ok((x, v))
}

/// Total energy `H(x, v) = U(x) + ||v||^2 / 2`. Unsupported for learned
/// forces, which carry no potential.
pub fn energy(force: &ForceField, s: &PhaseState) -> Result<f64> {
    match force.potential(&s.x)? {
        Some(u) => Ok(u + 0.5 * norm_sq(&s.v)),
        None => Err(Error::Unsupported(
            "energy of a learned force field (no potential)".into(),
        )),
    }
}

/// `|det D phi|` of the leapfrog map, estimated with central differences
/// over the `2d`-dimensional phase space. Intended for `2d <= 8`.
pub fn volume_check(
    force: &ForceField,
    s: &PhaseState,
    t: f64,
    n_steps: usize,
    h_fd: f64,
) -> Result<f64> {
    let d = s.dim();
    if 2 * d > 8 {
        return Err(Error::invalid(
            "finite-difference Jacobian check is limited to 2d <= 8",
        ));
    }
    let n = 2 * d;
    let mut jac = vec![0.0; n * n];
    for j in 0..n {
        let mut plus = s.clone();
        let mut minus = s.clone();
        if j < d {
            plus.x[j] += h_fd;
            minus.x[j] -= h_fd;
        } else {
            plus.v[j - d] += h_fd;
            minus.v[j - d] -= h_fd;
        }
        let fp = leapfrog(force, &plus, 0.0, t, n_steps)?;
        let fm = leapfrog(force, &minus, 0.0, t, n_steps)?;
        for i in 0..n {
            let (p, m) = if i < d {
                (fp.x[i], fm.x[i])
            } else {
                (fp.v[i - d], fm.v[i - d])
            };
            jac[i * n + j] = (p - m) / (2.0 * h_fd);
        }
    }
    Ok(linalg::det(&jac, n).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use approx::assert_relative_eq;

    fn state1(x: f64, v: f64) -> PhaseState {
        PhaseState::new(vec![x], vec![v]).unwrap()
    }

    #[test]
    fn flow_zero_trivia() {
        let s = PhaseState::new(vec![0.0, 0.0], vec![1.0, 0.0]).unwrap();
        assert_eq!(flow_zero(&s, 0.0), s);
        let moved = flow_zero(&s, 3.0);
        assert_eq!(moved.x, vec![3.0, 0.0]);
        assert_eq!(moved.v, vec![1.0, 0.0]);
    }

    #[test]
    fn leapfrog_zero_force_equals_free_flight() {
        let s = PhaseState::new(vec![0.4, -1.0], vec![-0.3, 2.0]).unwrap();
        let lf = leapfrog(&ForceField::Zero, &s, 0.0, 2.5, 7).unwrap();
        let exact = flow_zero(&s, 2.5);
        for i in 0..2 {
            assert_relative_eq!(lf.x[i], exact.x[i], epsilon = 1e-13);
            assert_relative_eq!(lf.v[i], exact.v[i], epsilon = 1e-13);
        }
    }

    #[test]
    fn oscillation_quarter_period_and_identity() {
        let alpha = 1.7;
        let s = state1(0.8, -0.4);
        let at_zero = flow_oscillation(&s, 0.0, alpha);
        assert_eq!(at_zero, s);

        // Quarter period: (v/alpha, -alpha x) exactly.
        let q = flow_oscillation(&s, std::f64::consts::FRAC_PI_2 / alpha, alpha);
        assert_relative_eq!(q.x[0], s.v[0] / alpha, epsilon = 1e-12);
        assert_relative_eq!(q.v[0], -alpha * s.x[0], epsilon = 1e-12);

        // Full period at alpha = 1 is the identity.
        let s2 = state1(1.3, 0.7);
        let full = flow_oscillation(&s2, 2.0 * std::f64::consts::PI, 1.0);
        assert_relative_eq!(full.x[0], s2.x[0], epsilon = 1e-12);
        assert_relative_eq!(full.v[0], s2.v[0], epsilon = 1e-12);
    }

    #[test]
    fn oscillation_energy_is_conserved_analytically() {
        let alpha = 0.6;
        let force = ForceField::oscillation(alpha).unwrap();
        let s = state1(1.1, -0.9);
        let e0 = energy(&force, &s).unwrap();
        let mut t = 0.0;
        while t < 7.0 {
            let st = flow_oscillation(&s, t, alpha);
            let e = energy(&force, &st).unwrap();
            assert!((e - e0).abs() < 1e-12, "t={t} drift {}", e - e0);
            t += 0.37;
        }
    }

    #[test]
    fn energy_trivia() {
        let s0 = state1(3.0, 0.0);
        assert_eq!(energy(&ForceField::Zero, &state1(0.0, 0.0)).unwrap(), 0.0);
        let osc = ForceField::oscillation(1.0).unwrap();
        assert_relative_eq!(energy(&osc, &state1(1.0, 0.0)).unwrap(), 0.5);
        let learned = ForceField::Learned {
            net: Mlp::new(crate::net::MlpConfig::autonomous(1, vec![4]), &mut Rng::new(0)),
            time_dependent: false,
        };
        assert!(energy(&learned, &s0).is_err());
    }

    #[test]
    fn leapfrog_tracks_oscillation_flow() {
        let alpha = 1.3;
        let force = ForceField::oscillation(alpha).unwrap();
        let s = state1(0.9, 0.2);
        let fine = leapfrog(&force, &s, 0.0, 1.0, 1000).unwrap();
        let exact = flow_oscillation(&s, 1.0, alpha);
        assert!((fine.x[0] - exact.x[0]).abs() < 1e-5);
        assert!((fine.v[0] - exact.v[0]).abs() < 1e-5);
    }

    #[test]
    fn energy_drift_is_second_order() {
        let m = GaussianMixture::standard_1d();
        let force = ForceField::AnalyticScore(m);
        let s = state1(0.7, -1.1);
        let drift = |n_steps: usize| -> f64 {
            let e0 = energy(&force, &s).unwrap();
            let h = 1.0 / n_steps as f64;
            let mut st = s.clone();
            let mut max = 0.0f64;
            for k in 0..n_steps {
                st = leapfrog(&force, &st, k as f64 * h, (k + 1) as f64 * h, 1).unwrap();
                let e = energy(&force, &st).unwrap();
                max = max.max((e - e0).abs());
            }
            max
        };
        let coarse = drift(50);
        let fine = drift(100);
        let order = (coarse / fine).log2();
        assert!(order >= 1.9, "observed order {order}");
    }

    #[test]
    fn leapfrog_time_reversal() {
        let m = GaussianMixture::bimodal_1d();
        let force = ForceField::AnalyticScore(m);
        let s = state1(0.3, 0.8);
        let fwd = leapfrog(&force, &s, 0.0, 1.0, 64).unwrap();
        // Negate velocity, integrate forward, negate again: exact reversal.
        let back_start = PhaseState::new(fwd.x.clone(), linalg::scale(&fwd.v, -1.0)).unwrap();
        let back = leapfrog(&force, &back_start, 0.0, 1.0, 64).unwrap();
        assert!((back.x[0] - s.x[0]).abs() < 1e-10);
        assert!((-back.v[0] - s.v[0]).abs() < 1e-10);
    }

    #[test]
    fn volume_preservation() {
        // Zero force: exact shear.
        let s = state1(0.4, -0.2);
        let det = volume_check(&ForceField::Zero, &s, 1.5, 10, 1e-4).unwrap();
        assert!((det - 1.0).abs() < 1e-9, "det {det}");

        // Leapfrog with a mixture score is symplectic up to float error.
        let force = ForceField::AnalyticScore(GaussianMixture::bimodal_1d());
        let det = volume_check(&force, &s, 1.0, 20, 1e-4).unwrap();
        assert!((det - 1.0).abs() < 1e-6, "det {det}");

        // 2D probe.
        let m2 = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![vec![-1.0, 0.0], vec![1.0, 0.5]],
            vec![0.8, 1.2],
        )
        .unwrap();
        let s2 = PhaseState::new(vec![0.2, -0.4], vec![0.5, 0.1]).unwrap();
        let det = volume_check(&ForceField::AnalyticScore(m2), &s2, 1.0, 16, 1e-4).unwrap();
        assert!((det - 1.0).abs() < 1e-6, "det {det}");
    }

    #[test]
    fn volume_check_rejects_large_dimension() {
        let m = GaussianMixture::new(
            vec![1.0],
            vec![vec![0.0; 5]],
            vec![1.0],
        )
        .unwrap();
        let s = PhaseState::new(vec![0.0; 5], vec![0.0; 5]).unwrap();
        assert!(volume_check(&ForceField::AnalyticScore(m), &s, 0.5, 4, 1e-4).is_err());
    }

    #[test]
    fn oscillation_analytic_map_has_unit_jacobian() {
        // The closed-form rotation map, differentiated by hand-rolled FD.
        let alpha = 0.9;
        let t = 1.2;
        let h = 1e-5;
        let mut jac = [0.0; 4];
        for j in 0..2 {
            let mut plus = state1(0.3, -0.6);
            let mut minus = plus.clone();
            if j == 0 {
                plus.x[0] += h;
                minus.x[0] -= h;
            } else {
                plus.v[0] += h;
                minus.v[0] -= h;
            }
            let fp = flow_oscillation(&plus, t, alpha);
            let fm = flow_oscillation(&minus, t, alpha);
            jac[j] = (fp.x[0] - fm.x[0]) / (2.0 * h);
            jac[2 + j] = (fp.v[0] - fm.v[0]) / (2.0 * h);
        }
        let det = crate::linalg::det(&jac, 2).abs();
        assert!((det - 1.0).abs() < 1e-8, "det {det}");
    }

    #[test]
    fn reflection_geometry() {
        // No wall hit: equals free flight.
        let s = state1(0.5, 0.3);
        let r = flow_reflection(&s, 0.5, &[0.0], &[1.0]).unwrap();
        assert_relative_eq!(r.x[0], 0.65, epsilon = 1e-14);
        assert_eq!(r.v[0], 0.3);

        // One reflection at the right wall and return.
        let s = state1(0.5, 1.0);
        let r = flow_reflection(&s, 1.0, &[0.0], &[1.0]).unwrap();
        assert_relative_eq!(r.x[0], 0.5, epsilon = 1e-12);
        assert_eq!(r.v[0], -1.0);

        // Outside the box is rejected.
        assert!(flow_reflection(&state1(2.0, 0.0), 0.1, &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn reflection_mixes_to_uniform() {
        // Folded marginal after t = 3 should be uniform on the box.
        let m = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![vec![-0.75], vec![0.75]],
            vec![0.0625, 0.0625],
        )
        .unwrap();
        let mut rng = Rng::new(321);
        let n = 100_000;
        let mut xs = Vec::with_capacity(n);
        let (lo, hi) = (-1.5, 1.5);
        for _ in 0..n {
            let mut x = m.sample_one(&mut rng);
            while x[0] < lo || x[0] > hi {
                x = m.sample_one(&mut rng);
            }
            let s = PhaseState::new(x, vec![rng.normal()]).unwrap();
            xs.push(flow_reflection(&s, 3.0, &[lo], &[hi]).unwrap().x[0]);
        }
        let ks = crate::metrics::ks_distance_to_uniform(&mut xs, lo, hi);
        assert!(ks <= 0.02, "ks {ks}");
    }

    #[test]
    fn taped_leapfrog_matches_plain() {
        let alpha = 0.8;
        let force = ForceField::oscillation(alpha).unwrap();
        let s = state1(0.5, -0.2);
        let plain = leapfrog(&force, &s, 0.0, 1.0, 5).unwrap();

        let mut tape = Tape::new();
        let x0 = tape.leaf(&s.x);
        let v0 = tape.leaf(&s.v);
        let (x, v) =
            leapfrog_taped(&mut tape, &TapedForce::Oscillation { alpha }, x0, v0, 0.0, 1.0, 5)
                .unwrap();
        assert_eq!(tape.value(x), plain.x.as_slice());
        assert_eq!(tape.value(v), plain.v.as_slice());
    }

    #[test]
    fn divergence_guard_reports_step() {
        // A runaway linear force x' = +k x with huge gain blows up fast.
        let mut net = Mlp::new(crate::net::MlpConfig::autonomous(1, vec![]), &mut Rng::new(0));
        net.set_params_flat(&[50.0, 0.0]).unwrap();
        let force = ForceField::Learned { net, time_dependent: false };
        let s = state1(1.0, 0.0);
        match leapfrog(&force, &s, 0.0, 40.0, 400) {
            Err(Error::Diverged { step }) => assert!(step > 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
