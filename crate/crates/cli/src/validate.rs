//! Built-in validation suite.
//!
//! `fast` runs the per-module invariants in well under two minutes; `full`
//! adds the trained-model checks: closed-form discrepancy values, the
//! small-time Taylor law, the discrepancy/ESM correlation study, min-max
//! score learning, exact- and trained-predictor generation, the rotation
//! form of the noise-parameterized probability-flow ODE, gradient
//! signal-to-noise, and the reflection flow. Every check carries its
//! threshold; the runner reports one record per check.

use hamflow_core::dynamics::{
    energy, flow_oscillation, flow_reflection, leapfrog, volume_check, ForceField, PhaseState,
};
use hamflow_core::gmm::GaussianMixture;
use hamflow_core::hgf::{self, HgfKind, TimeDist, TrainConfig};
use hamflow_core::hsm::{self, HsdConfig, HsmConfig, SnrMethod};
use hamflow_core::metrics;
use hamflow_core::net::{AdamState, Mlp, MlpConfig, Tape};
use hamflow_core::sampler::{self, AnalyticHvp, NetPredictor, Schedule, SmoothedScoreDrift};
use hamflow_core::{linalg, Result, Rng};
use serde::Serialize;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Fast,
    Full,
}

/// Outcome of one named check. `value` compares against `threshold` in the
/// direction given by `op` ("<=" or ">=").
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub op: &'static str,
    pub threshold: f64,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct ValidationReport {
    pub level: Level,
    pub all_passed: bool,
    pub total_seconds: f64,
    pub results: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.results.iter().find(|r| r.name == name)
    }
}

struct Outcome {
    value: f64,
    op: &'static str,
    threshold: f64,
    detail: String,
}

impl Outcome {
    fn le(value: f64, threshold: f64, detail: impl Into<String>) -> Result<Outcome> {
        Ok(Outcome { value, op: "<=", threshold, detail: detail.into() })
    }

    fn ge(value: f64, threshold: f64, detail: impl Into<String>) -> Result<Outcome> {
        Ok(Outcome { value, op: ">=", threshold, detail: detail.into() })
    }

    fn passed(&self) -> bool {
        match self.op {
            "<=" => self.value <= self.threshold,
            ">=" => self.value >= self.threshold,
            _ => false,
        }
    }
}

type CheckFn = fn() -> Result<Outcome>;
type Check = (&'static str, Box<dyn Fn() -> Result<Outcome>>);

fn fast_checks() -> Vec<Check> {
    let checks: Vec<(&'static str, CheckFn)> = vec![
        ("rng_determinism", check_rng_determinism),
        ("gmm_score_finite_difference", check_gmm_score_fd),
        ("gmm_posterior_normalization", check_posterior_norm),
        ("gmm_sampling_moments", check_sampling_moments),
        ("mlp_gradient_check", check_mlp_gradient),
        ("adam_quadratic_bowl", check_adam_bowl),
        ("leapfrog_vs_oscillation_flow", check_leapfrog_oscillation),
        ("energy_drift_order", check_energy_drift_order),
        ("symplectic_volume", check_symplectic_volume),
        ("leapfrog_time_reversal", check_time_reversal),
        ("oscillation_full_period_identity", check_full_period),
        ("reflection_forward_uniform_quick", check_reflection_quick),
        ("dsm_equivalence_bitwise", check_dsm_equivalence),
        ("hsm_loss_identity", check_hsm_identity),
        ("analytic_hvp_binned_mc", check_hvp_binned),
        ("hsd_closed_form_quick", check_hsd_quick),
        ("heun_order", check_heun_order),
        ("terminal_moments", check_terminal_moments),
        ("checkpoint_roundtrip", check_checkpoint_roundtrip),
        ("edm_grid_mapping", check_edm_grid),
        ("constant_scale_quick", check_scale_quick),
        ("ism_esm_constant_gap", check_ism_gap),
    ];
    checks
        .into_iter()
        .map(|(n, f)| (n, Box::new(f) as Box<dyn Fn() -> Result<Outcome>>))
        .collect()
}

fn full_checks(artifacts: Option<std::path::PathBuf>) -> Vec<Check> {
    let mut checks = fast_checks();
    let dir = |a: &Option<std::path::PathBuf>| a.clone();
    let a1 = dir(&artifacts);
    let a2 = dir(&artifacts);
    let a3 = dir(&artifacts);
    checks.push(("hsd_of_true_score", Box::new(check_hsd_true_score)));
    checks.push(("hsd_closed_form_t01", Box::new(|| check_hsd_closed_form(0.1))));
    checks.push(("hsd_closed_form_t05", Box::new(|| check_hsd_closed_form(0.5))));
    checks.push(("hsd_closed_form_t10", Box::new(|| check_hsd_closed_form(1.0))));
    checks.push(("taylor_law_t01", Box::new(move || check_taylor_law(a1.as_deref()))));
    checks.push(("esm_hsd_correlation", Box::new(move || check_correlation(a2.as_deref()))));
    checks.push(("hsm_learns_score_gauss1d", Box::new(check_hsm_gauss)));
    checks.push(("hsm_learns_score_gmm1d", Box::new(check_hsm_bimodal)));
    checks.push(("oscillation_oracle_sampling", Box::new(check_osc_oracle_sampling)));
    checks.push(("oscillation_trained_sampling", Box::new(check_osc_trained_sampling)));
    checks.push(("flow_matching_end_to_end", Box::new(check_flow_matching)));
    checks.push(("edm_endpoint_equivalence", Box::new(check_edm_equivalence)));
    checks.push(("constant_scale_full", Box::new(check_scale_full)));
    checks.push(("snr_direction", Box::new(move || check_snr_direction(a3.as_deref()))));
    checks.push(("reflection_forward_ks", Box::new(check_reflection_forward)));
    checks.push(("reflection_trained_tv", Box::new(check_reflection_trained)));
    checks.push(("diffusion_hvp_conditional", Box::new(check_hvp_conditional)));
    checks.push(("true_score_zero_predictor", Box::new(check_zero_predictor)));
    checks.push(("dsm_minimizer_grid", Box::new(check_dsm_minimizer)));
    checks.push(("point_mass_hvp", Box::new(check_point_mass)));
    checks
}

/// Run the suite at the given level.
pub fn run(level: Level) -> ValidationReport {
    run_with_artifacts(level, None)
}

/// Run the suite; when `artifacts` is given, the full-level diagnostic
/// tables (taylor.csv, correlation.csv, snr.csv) are written there.
pub fn run_with_artifacts(level: Level, artifacts: Option<&std::path::Path>) -> ValidationReport {
    run_inner(level, artifacts, None)
}

fn run_inner(
    level: Level,
    artifacts: Option<&std::path::Path>,
    filter: Option<&str>,
) -> ValidationReport {
    if let Some(dir) = artifacts {
        std::fs::create_dir_all(dir).ok();
    }
    let mut checks = match level {
        Level::Fast => fast_checks(),
        Level::Full => full_checks(artifacts.map(|p| p.to_path_buf())),
    };
    if let Some(f) = filter {
        checks.retain(|(name, _)| name.contains(f));
    }
    let start = Instant::now();
    let mut results = Vec::with_capacity(checks.len());
    for (name, f) in checks {
        let t0 = Instant::now();
        let result = match f() {
            Ok(out) => CheckResult {
                name: name.to_string(),
                passed: out.passed(),
                value: out.value,
                op: out.op,
                threshold: out.threshold,
                detail: out.detail,
                seconds: t0.elapsed().as_secs_f64(),
            },
            Err(e) => CheckResult {
                name: name.to_string(),
                passed: false,
                value: f64::NAN,
                op: "<=",
                threshold: f64::NAN,
                detail: format!("error: {e}"),
                seconds: t0.elapsed().as_secs_f64(),
            },
        };
        log::info!(
            "check {}: {} (value {:.6} {} {:.6}, {:.1}s)",
            result.name,
            if result.passed { "pass" } else { "FAIL" },
            result.value,
            result.op,
            result.threshold,
            result.seconds
        );
        results.push(result);
    }
    ValidationReport {
        level,
        all_passed: results.iter().all(|r| r.passed),
        total_seconds: start.elapsed().as_secs_f64(),
        results,
    }
}

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

// ---------------------------------------------------------------- fast ---

fn check_rng_determinism() -> Result<Outcome> {
    let mut a = Rng::new(42);
    let mut b = Rng::new(42);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        if a.next_u64() != b.next_u64() {
            worst = 1.0;
        }
    }
    if Rng::new(7).split(3) != Rng::new(7).split(3) {
        worst = 1.0;
    }
    Outcome::le(worst, 0.0, "bit-exact replay and split")
}

fn check_gmm_score_fd() -> Result<Outcome> {
    let m = GaussianMixture::bimodal_1d();
    let h = 1e-4;
    let mut worst = 0.0f64;
    let mut x = -5.0;
    while x <= 5.0 {
        let fd = (m.log_density(&[x + h])? - m.log_density(&[x - h])?) / (2.0 * h);
        worst = worst.max((fd - m.score(&[x])?[0]).abs());
        x += 0.25;
    }
    Outcome::le(worst, 1e-6, "max |score - central difference| on [-5,5]")
}

fn check_posterior_norm() -> Result<Outcome> {
    let m = GaussianMixture::new(
        vec![0.3, 0.45, 0.25],
        vec![vec![-2.0, 1.0], vec![0.5, 0.0], vec![3.0, -2.0]],
        vec![0.5, 1.0, 2.0],
    )?;
    let mut rng = Rng::new(3);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let x = [rng.uniform(-6.0, 6.0), rng.uniform(-6.0, 6.0)];
        let total: f64 = m.posterior(&x)?.iter().sum();
        worst = worst.max((total - 1.0).abs());
    }
    Outcome::le(worst, 1e-12, "max |sum responsibilities - 1|")
}

fn check_sampling_moments() -> Result<Outcome> {
    let m = GaussianMixture::bimodal_1d();
    let mut rng = Rng::new(12);
    let n = 100_000;
    let mean: f64 = m.sample(&mut rng, n).iter().map(|x| x[0]).sum::<f64>() / n as f64;
    Outcome::le((mean - 0.4).abs(), 0.03, format!("sample mean {mean:.4} vs 0.4"))
}

fn check_mlp_gradient() -> Result<Outcome> {
    let net = randomized(MlpConfig::time_conditioned(2, vec![12, 12]), 23, 0.8);
    let params = net.params_flat();
    let x = [0.7, -0.4];
    let t = 0.9;
    let u = [0.6, -1.1];

    let mut tape = Tape::new();
    let binding = net.bind(&mut tape);
    let x_id = tape.leaf(&x);
    let t_id = tape.leaf_scalar(t);
    let out = net.forward_taped(&mut tape, &binding, x_id, Some(t_id));
    let u_id = tape.leaf(&u);
    let probe = tape.dot(out, u_id);
    let grad = net.grad_flat(&binding, &tape.backward(probe));

    let mut rng = Rng::new(5);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let dir: Vec<f64> = (0..params.len()).map(|_| rng.normal()).collect();
        let analytic: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        let h = 1e-5;
        let eval = |shift: f64| -> Result<f64> {
            let mut n = net.clone();
            let p: Vec<f64> = params.iter().zip(&dir).map(|(v, d)| v + shift * d).collect();
            n.set_params_flat(&p)?;
            Ok(linalg::dot(&n.forward(&x, Some(t))?, &u))
        };
        let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
        worst = worst.max((analytic - fd).abs() / fd.abs().max(1e-12));
    }
    Outcome::le(worst, 1e-4, "max relative gradient error over 10 probes")
}

fn check_adam_bowl() -> Result<Outcome> {
    let mut adam = AdamState::new(4, 1e-2);
    let mut x = vec![2.0, -1.5, 0.7, 3.0];
    for _ in 0..2000 {
        let grad = x.clone();
        adam.step(&mut x, &grad)?;
    }
    Outcome::le(linalg::norm(&x), 1e-3, "||x|| after 2000 steps, lr 1e-2")
}

fn check_leapfrog_oscillation() -> Result<Outcome> {
    let alpha = 1.3;
    let force = ForceField::oscillation(alpha)?;
    let s = PhaseState::new(vec![0.9], vec![0.2])?;
    let lf = leapfrog(&force, &s, 0.0, 1.0, 1000)?;
    let exact = flow_oscillation(&s, 1.0, alpha);
    let err = (lf.x[0] - exact.x[0]).abs().max((lf.v[0] - exact.v[0]).abs());
    Outcome::le(err, 1e-5, "leapfrog h=1e-3 endpoint vs closed form")
}

fn check_energy_drift_order() -> Result<Outcome> {
    let m = GaussianMixture::standard_1d();
    let force = ForceField::AnalyticScore(m);
    let s = PhaseState::new(vec![0.7], vec![-1.1])?;
    let drift = |n_steps: usize| -> Result<f64> {
        let e0 = energy(&force, &s)?;
        let h = 1.0 / n_steps as f64;
        let mut st = s.clone();
        let mut max = 0.0f64;
        for k in 0..n_steps {
            st = leapfrog(&force, &st, k as f64 * h, (k + 1) as f64 * h, 1)?;
            max = max.max((energy(&force, &st)? - e0).abs());
        }
        Ok(max)
    };
    let order = (drift(50)? / drift(100)?).log2();
    Outcome::ge(order, 1.9, "observed drift order under step halving")
}

fn check_symplectic_volume() -> Result<Outcome> {
    let m1 = GaussianMixture::bimodal_1d();
    let s1 = PhaseState::new(vec![0.4], vec![-0.2])?;
    let d1 = volume_check(&ForceField::AnalyticScore(m1), &s1, 1.0, 20, 1e-4)?;
    let m2 = GaussianMixture::new(
        vec![0.5, 0.5],
        vec![vec![-1.0, 0.0], vec![1.0, 0.5]],
        vec![0.8, 1.2],
    )?;
    let s2 = PhaseState::new(vec![0.2, -0.4], vec![0.5, 0.1])?;
    let d2 = volume_check(&ForceField::AnalyticScore(m2), &s2, 1.0, 16, 1e-4)?;
    let worst = (d1 - 1.0).abs().max((d2 - 1.0).abs());
    Outcome::le(worst, 1e-6, format!("dets {d1:.9} / {d2:.9}"))
}

fn check_time_reversal() -> Result<Outcome> {
    let m = GaussianMixture::bimodal_1d();
    let force = ForceField::AnalyticScore(m);
    let s = PhaseState::new(vec![0.3], vec![0.8])?;
    let fwd = leapfrog(&force, &s, 0.0, 1.0, 64)?;
    let flipped = PhaseState::new(fwd.x.clone(), linalg::scale(&fwd.v, -1.0))?;
    let back = leapfrog(&force, &flipped, 0.0, 1.0, 64)?;
    let err = (back.x[0] - s.x[0]).abs().max((-back.v[0] - s.v[0]).abs());
    Outcome::le(err, 1e-10, "round trip displacement")
}

fn check_full_period() -> Result<Outcome> {
    let s = PhaseState::new(vec![1.3], vec![0.7])?;
    let full = flow_oscillation(&s, 2.0 * std::f64::consts::PI, 1.0);
    let err = (full.x[0] - s.x[0]).abs().max((full.v[0] - s.v[0]).abs());
    Outcome::le(err, 1e-12, "alpha=1 flow at t=2pi vs identity")
}

fn reflect2d_mixture() -> GaussianMixture {
    GaussianMixture::new(
        vec![0.5, 0.5],
        vec![vec![-0.75, -0.75], vec![0.75, 0.75]],
        vec![0.0625, 0.0625],
    )
    .unwrap()
}

fn reflection_forward_ks(n: usize) -> Result<f64> {
    let m = reflect2d_mixture();
    let kind = HgfKind::Reflection { lo: vec![-1.5, -1.5], hi: vec![1.5, 1.5] };
    let mut rng = Rng::new(50);
    let mut per_dim: Vec<Vec<f64>> = (0..2).map(|_| Vec::with_capacity(n)).collect();
    for _ in 0..n {
        let (x_t, _) = hgf::sample_pair(&kind, &m, &mut rng, 3.0, 5)?;
        per_dim[0].push(x_t[0]);
        per_dim[1].push(x_t[1]);
    }
    let mut worst = 0.0f64;
    for dim in per_dim.iter_mut() {
        worst = worst.max(metrics::ks_distance_to_uniform(dim, -1.5, 1.5));
    }
    Ok(worst)
}

fn check_reflection_quick() -> Result<Outcome> {
    // Geometry plus a reduced-size mixing check.
    let s = PhaseState::new(vec![0.5], vec![1.0])?;
    let r = flow_reflection(&s, 1.0, &[0.0], &[1.0])?;
    if (r.x[0] - 0.5).abs() > 1e-12 || r.v[0] != -1.0 {
        return Outcome::le(1.0, 0.0, "single-bounce geometry failed");
    }
    let ks = reflection_forward_ks(20_000)?;
    Outcome::le(ks, 0.02, "worst per-dim KS to uniform at t=3, n=2e4")
}

fn check_dsm_equivalence() -> Result<Outcome> {
    let m = GaussianMixture::bimodal_1d();
    let net = randomized(MlpConfig::time_conditioned(1, vec![16, 16]), 12, 0.5);
    let eq = hgf::diffusion_dsm_equivalence(&net, &m, 64, &mut Rng::new(12))?;
    Outcome::le(
        eq.max_loss_gap.max(eq.max_grad_gap),
        1e-12,
        format!("loss gap {:.2e}, grad gap {:.2e}", eq.max_loss_gap, eq.max_grad_gap),
    )
}

fn check_hsm_identity() -> Result<Outcome> {
    let m = GaussianMixture::bimodal_1d();
    let v_net = randomized(MlpConfig::time_conditioned(1, vec![12]), 3, 0.4);
    let force = ForceField::AnalyticScore(m.clone());
    let parts = hsm::hsm_loss_parts(&v_net, &force, &m, 0.7, 256, 5, &mut Rng::new(8))?;
    let gap = (parts.hsm - (parts.velocity_loss - parts.mean_sq_velocity)).abs();
    Outcome::le(gap, 1e-12, "L_hsm vs L_V - E||v||^2 on shared draws")
}

fn check_hvp_binned() -> Result<Outcome> {
    let m = GaussianMixture::bimodal_1d();
    let kind = HgfKind::Oscillation { alpha: m.natural_alpha() };
    let t = 0.9;
    let mut rng = Rng::new(77);
    let n = 200_000;
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
    for _ in 0..n {
        let (x_t, v_t) = hgf::sample_pair(&kind, &m, &mut rng, t, 5)?;
        pairs.push((x_t[0], v_t[0]));
    }
    pairs.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut worst_z = 0.0f64;
    for chunk in pairs.chunks(n / 50) {
        let cn = chunk.len() as f64;
        let mc = chunk.iter().map(|p| p.1).sum::<f64>() / cn;
        let var = chunk.iter().map(|p| (p.1 - mc) * (p.1 - mc)).sum::<f64>() / (cn - 1.0);
        let se = (var / cn).sqrt();
        let mut oracle = 0.0;
        for (x, _) in chunk {
            oracle += hgf::analytic_hvp(&kind, &m, &[*x], t)?[0];
        }
        oracle /= cn;
        worst_z = worst_z.max((mc - oracle).abs() / (se + 1e-4));
    }
    Outcome::le(worst_z, 5.0, "worst bin z-score, analytic vs binned MC")
}

fn check_hsd_quick() -> Result<Outcome> {
    let m = GaussianMixture::standard_1d();
    let t = 0.5;
    let cfg = HsdConfig {
        lambda: TimeDist::Fixed(t),
        seed: 16,
        ..HsdConfig::fast(16)
    };
    let est = hsm::hsd_estimate(&ForceField::Zero, &m, &cfg)?;
    let expect = t * t / (1.0 + t * t);
    Outcome::le(
        (est.value / expect - 1.0).abs(),
        0.10,
        format!("hsd {:.5} vs closed form {:.5}", est.value, expect),
    )
}

fn check_heun_order() -> Result<Outcome> {
    let m = GaussianMixture::standard_1d();
    let predictor = AnalyticHvp { kind: HgfKind::Diffusion, mixture: &m };
    let grid = |steps: usize| -> Vec<f64> {
        (0..=steps)
            .map(|i| 3.0 * (steps - i) as f64 / steps as f64)
            .collect()
    };
    let inits = [[2.5], [-1.0], [4.0], [0.3]];
    let reference: Vec<f64> = inits
        .iter()
        .map(|x0| Ok(sampler::integrate_backward(&predictor, &grid(4096), x0, false)?[0]))
        .collect::<Result<_>>()?;
    let err_at = |steps: usize| -> Result<f64> {
        let mut worst = 0.0f64;
        for (x0, r) in inits.iter().zip(&reference) {
            let e = sampler::integrate_backward(&predictor, &grid(steps), x0, false)?[0];
            worst = worst.max((e - r).abs());
        }
        Ok(worst)
    };
    let order = (err_at(16)? / err_at(64)?).log2() / 2.0;
    Outcome::ge(order, 1.9, "endpoint error order, 16 vs 64 steps")
}

fn check_terminal_moments() -> Result<Outcome> {
    let m = GaussianMixture::bimodal_1d();
    let alpha = m.natural_alpha();
    let sched = Schedule::oscillation(&m, alpha, 32, 0.0)?;
    let samples = sampler::terminal_sample(&sched, &mut Rng::new(4), 100_000);
    let (_, var) = metrics::moments(&samples)[0];
    let expect = 1.0 / (alpha * alpha);
    Outcome::le(
        (var / expect - 1.0).abs(),
        0.02,
        format!("terminal var {var:.3} vs exact {expect:.3}"),
    )
}

fn check_checkpoint_roundtrip() -> Result<Outcome> {
    let dir = std::env::temp_dir().join(format!("hamflow-validate-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("roundtrip.json");
    let net = randomized(MlpConfig::time_conditioned(1, vec![8, 8]), 42, 0.3);
    hamflow_core::checkpoint::save_mlp(&net, "hash", &path)?;
    let (loaded, _) = hamflow_core::checkpoint::load_mlp(&path)?;
    let x = [0.37];
    let gap = (loaded.forward(&x, Some(0.5))?[0] - net.forward(&x, Some(0.5))?[0]).abs();
    std::fs::remove_file(&path).ok();
    Outcome::le(gap, 0.0, "bit-exact save/load/forward")
}

fn check_edm_grid() -> Result<Outcome> {
    let grid = sampler::edm_time_grid(&[1.0, 0.5, 1e-9])?;
    let gap = (grid[0] - std::f64::consts::FRAC_PI_4).abs();
    let ok_small = grid[2] > 0.0 && grid[2] < 1.1e-9;
    Outcome::le(
        if ok_small { gap } else { 1.0 },
        1e-15,
        "arctan(1) = pi/4 and sigma -> 0+ maps to t -> 0+",
    )
}

fn check_scale_quick() -> Result<Outcome> {
    let m = GaussianMixture::bimodal_1d();
    let alpha = m.natural_alpha();
    let c = hgf::constant_scale_check(&m, alpha, 0.4, 20_000, &mut Rng::new(3))?;
    let expect_loc = 1.0 / (alpha * alpha);
    let z = ((c.location.mean - expect_loc).abs() / c.location.std_error)
        .max((c.velocity.mean - 1.0).abs() / c.velocity.std_error);
    Outcome::le(z, 3.0, "location/velocity scales at t=0.4 vs d/alpha^2 and d")
}

fn check_ism_gap() -> Result<Outcome> {
    let m = GaussianMixture::bimodal_1d();
    let mut nets = Vec::new();
    let mut lin = Mlp::new(MlpConfig::autonomous(1, vec![]), &mut Rng::new(0));
    lin.set_params_flat(&[-0.8, 0.1])?;
    nets.push(lin);
    nets.push(randomized(MlpConfig::autonomous(1, vec![16]), 21, 0.6));
    nets.push(randomized(MlpConfig::autonomous(1, vec![16]), 22, 0.6));
    let n = 100_000;
    let root = Rng::new(9);
    let mut gaps = Vec::new();
    for net in &nets {
        let ism = hsm::ism_loss(net, &m, n, &mut root.split(1))?;
        let force = ForceField::Learned { net: net.clone(), time_dependent: false };
        let esm = hsm::esm_loss(&force, &m, n, &mut root.split(2))?;
        gaps.push(ism - esm);
    }
    let spread = gaps
        .windows(2)
        .map(|w| (w[0] - w[1]).abs())
        .fold(0.0f64, f64::max);
    Outcome::le(spread, 0.02, format!("gaps {gaps:?}"))
}

// ---------------------------------------------------------------- full ---

fn check_hsd_true_score() -> Result<Outcome> {
    // The other direction of the discrepancy characterization: the true
    // score force has (near-)zero discrepancy on the benchmark mixture.
    let m = GaussianMixture::bimodal_1d();
    let force = ForceField::AnalyticScore(m.clone());
    let cfg = HsdConfig { seed: 19, ..HsdConfig::default() };
    let est = hsm::hsd_estimate(&force, &m, &cfg)?;
    Outcome::le(
        est.value.abs(),
        0.01,
        format!("hsd {:.5} +- {:.5} for the analytic score force", est.value, est.std_error),
    )
}

fn check_hsd_closed_form(t: f64) -> Result<Outcome> {
    let m = GaussianMixture::standard_1d();
    let cfg = HsdConfig {
        lambda: TimeDist::Fixed(t),
        seed: 11 + (t * 10.0) as u64,
        fresh_draws: true,
        antithetic_fit: true,
        ..HsdConfig::default()
    };
    let est = hsm::hsd_estimate(&ForceField::Zero, &m, &cfg)?;
    let expect = t * t / (1.0 + t * t);
    Outcome::le(
        (est.value / expect - 1.0).abs(),
        0.10,
        format!("hsd {:.6} +- {:.6} vs {:.6}", est.value, est.std_error, expect),
    )
}

fn check_taylor_law(artifacts: Option<&std::path::Path>) -> Result<Outcome> {
    let m = GaussianMixture::standard_1d();
    // Light estimates fill the reported table; the acceptance time t = 0.1
    // gets a replicated high-precision estimate.
    let light = HsdConfig {
        seed: 42,
        fresh_draws: true,
        antithetic_fit: true,
        ..HsdConfig::default()
    };
    let heavy = HsdConfig {
        seed: 42,
        inner_steps: 4000,
        tail_average: 0.3,
        eval_pairs: 1_600_000,
        fresh_draws: true,
        antithetic_fit: true,
        replicates: 3,
        ..HsdConfig::default()
    };
    let mut rows = hsm::taylor_check(&ForceField::Zero, &m, &[0.05, 0.2, 0.4], 1_000_000, &light)?;
    let criterion_rows = hsm::taylor_check(&ForceField::Zero, &m, &[0.1], 1_000_000, &heavy)?;
    let row = criterion_rows[0];
    rows.insert(1, row);
    if let Some(dir) = artifacts {
        crate::output::write_csv(
            &dir.join("taylor.csv"),
            &["t", "hsd", "hsd_std_error", "taylor", "ratio"],
            rows.iter().map(|r| [r.t, r.hsd, r.hsd_std_error, r.taylor, r.ratio]),
        )?;
    }
    Outcome::le(
        (row.ratio - 1.0).abs(),
        0.02,
        format!(
            "hsd {:.6} +- {:.6} taylor {:.6} ratio {:.4} (analytic 0.9901)",
            row.hsd, row.hsd_std_error, row.taylor, row.ratio
        ),
    )
}

fn check_correlation(artifacts: Option<&std::path::Path>) -> Result<Outcome> {
    let m = GaussianMixture::bimodal_1d();
    let mut rng = Rng::new(9);
    let mut net = Mlp::new(MlpConfig::autonomous(1, vec![64, 64]), &mut rng);
    let stages = [0usize, 60, 120, 180, 240, 360, 600, 1000, 1600, 2600, 4200];
    let mut esms = Vec::new();
    let mut hsds = Vec::new();
    let mut done = 0;
    for (i, &stage) in stages.iter().enumerate() {
        net = hsm::dsm_fit(net, &m, 0.2, stage - done, 128, 1e-3, &mut rng)?;
        done = stage;
        let force = ForceField::Learned { net: net.clone(), time_dependent: false };
        esms.push(hsm::esm_loss(&force, &m, 100_000, &mut rng.split(i as u64))?);
        let cfg = HsdConfig { seed: 77 + i as u64, ..HsdConfig::default() };
        let est = hsm::hsd_estimate(&force, &m, &cfg)?;
        // Non-negativity up to noise and inner-fit residual.
        if est.value < -(2.0 * est.std_error + 1e-4) {
            return Outcome::ge(est.value, 0.0, "negative discrepancy estimate");
        }
        hsds.push(est.value);
    }
    if let Some(dir) = artifacts {
        crate::output::write_csv(
            &dir.join("correlation.csv"),
            &["esm", "hsd"],
            esms.iter().zip(&hsds).map(|(&e, &h)| [e, h]),
        )?;
    }
    let r = metrics::pearson(&esms, &hsds);
    Outcome::ge(r, 0.8, format!("pearson over {} snapshots", esms.len()))
}

fn check_hsm_gauss() -> Result<Outcome> {
    let m = GaussianMixture::standard_1d();
    let mut rng = Rng::new(3);
    let force_net = Mlp::new(MlpConfig::autonomous(1, vec![32, 32]), &mut rng);
    let v_net = Mlp::new(MlpConfig::time_conditioned(1, vec![64, 64]), &mut rng);
    let cfg = HsmConfig { iterations: 1500, seed: 3, ..HsmConfig::default() };
    let run = hsm::train_hsm(force_net, v_net, &m, &cfg)?;
    let esm = run.diagnostics.last().map(|d| d.esm).unwrap_or(f64::NAN);
    Outcome::le(esm, 0.02, "final oracle ESM on N(0,1)")
}

fn check_hsm_bimodal() -> Result<Outcome> {
    let m = GaussianMixture::bimodal_1d();
    let mut rng = Rng::new(3);
    let force_net = Mlp::new(MlpConfig::autonomous(1, vec![64, 64]), &mut rng);
    let v_net = Mlp::new(MlpConfig::time_conditioned(1, vec![64, 64]), &mut rng);
    let cfg = HsmConfig { iterations: 3000, seed: 3, ..HsmConfig::default() };
    let run = hsm::train_hsm(force_net, v_net, &m, &cfg)?;
    let esm = run.diagnostics.last().map(|d| d.esm).unwrap_or(f64::NAN);

    // Density-weighted MSE of the learned force against the score.
    let force = ForceField::Learned { net: run.force.clone(), time_dependent: false };
    let mut num = 0.0;
    let mut den = 0.0;
    let mut x = -5.0;
    while x <= 5.0 {
        let w = m.log_density(&[x])?.exp();
        let diff = force.eval(&[x], 0.0)?[0] - m.score(&[x])?[0];
        num += w * diff * diff;
        den += w;
        x += 0.05;
    }
    let weighted_mse = num / den;
    Outcome::le(
        esm.max(weighted_mse),
        0.1,
        format!("esm {esm:.4}, weighted MSE {weighted_mse:.4}"),
    )
}

fn sampling_distances(m: &GaussianMixture, gen: &[Vec<f64>], n: usize) -> (f64, f64) {
    // Pair-averaged noise floor and generated-vs-true distance; a single
    // draw of the statistic fluctuates on the order of its own mean.
    let root = Rng::new(200);
    let pairs = 8u64;
    let mut floor = 0.0;
    for k in 0..pairs {
        let a = m.sample(&mut root.split(1000 + 2 * k), n);
        let b = m.sample(&mut root.split(1001 + 2 * k), n);
        floor += metrics::energy_distance(&a, &b);
    }
    let mut dist = 0.0;
    for j in 0..pairs {
        let t = m.sample(&mut root.split(5000 + j), n);
        dist += metrics::energy_distance(gen, &t);
    }
    (dist / pairs as f64, floor / pairs as f64)
}

fn check_osc_oracle_sampling() -> Result<Outcome> {
    let m = GaussianMixture::bimodal_1d();
    let alpha = m.natural_alpha();
    let n = 100_000;
    let sched = Schedule::oscillation(&m, alpha, 64, 0.0)?;
    let predictor = AnalyticHvp { kind: HgfKind::Oscillation { alpha }, mixture: &m };
    let gen = sampler::heun_sample(&predictor, &sched, &Rng::new(100), n)?;
    let (dist, floor) = sampling_distances(&m, &gen, n);
    Outcome::le(
        dist / floor,
        1.5,
        format!("energy distance {dist:.3e} vs floor {floor:.3e}, 64 Heun steps"),
    )
}

fn check_osc_trained_sampling() -> Result<Outcome> {
    let m = GaussianMixture::bimodal_1d();
    let alpha = m.natural_alpha();
    let kind = HgfKind::Oscillation { alpha };
    let mut rng = Rng::new(21);
    let net = Mlp::new(MlpConfig::time_conditioned(1, vec![64, 64]), &mut rng);
    let cfg = TrainConfig {
        batch: 512,
        iterations: 12_000,
        lr: 2e-3,
        seed: 21,
        antithetic: true,
        tail_average: 0.25,
        ..TrainConfig::default()
    };
    let out = hgf::train_hvp(&kind, &m, net, &cfg, &mut rng)?;
    let n = 100_000;
    let sched = Schedule::oscillation(&m, alpha, 64, 1e-3)?;
    let predictor = NetPredictor(&out.net);
    let gen = sampler::heun_sample(&predictor, &sched, &Rng::new(100), n)?;
    let (dist, floor) = sampling_distances(&m, &gen, n);
    Outcome::le(
        dist / floor,
        3.0,
        format!("energy distance {dist:.3e} vs floor {floor:.3e}, trained predictor"),
    )
}

fn check_flow_matching() -> Result<Outcome> {
    // Coupled-draw zero-force flow: train the predictor, compare against
    // the per-component Gaussian conditional E[v | x_t], then sample.
    let m = GaussianMixture::bimodal_1d();
    let kind = HgfKind::FlowMatching;
    let mut rng = Rng::new(33);
    let net = Mlp::new(MlpConfig::time_conditioned(1, vec![64, 64]), &mut rng);
    let cfg = TrainConfig {
        batch: 512,
        iterations: 8000,
        lr: 2e-3,
        seed: 33,
        antithetic: true,
        tail_average: 0.25,
        ..TrainConfig::default()
    };
    let out = hgf::train_hvp(&kind, &m, net, &cfg, &mut rng)?;

    // Closed-form conditional for x_t = (1-t) x + t eps, v = eps - x:
    // per component (x ~ N(mu, s2), eps ~ N(0,1)), jointly Gaussian.
    let conditional = |xi: f64, t: f64| -> Result<f64> {
        let a = 1.0 - t;
        let mut log_w = Vec::new();
        for ((&w, mu), &s2) in m.weights().iter().zip(m.means()).zip(m.variances()) {
            let var = a * a * s2 + t * t;
            let diff = xi - a * mu[0];
            log_w.push(w.ln() - 0.5 * (diff * diff / var + var.ln()));
        }
        let lse = linalg::logsumexp(&log_w);
        let mut total = 0.0;
        for (i, (mu, &s2)) in m.means().iter().zip(m.variances()).enumerate() {
            let r = (log_w[i] - lse).exp();
            let var = a * a * s2 + t * t;
            let cov = t - a * s2;
            total += r * (-mu[0] + cov / var * (xi - a * mu[0]));
        }
        Ok(total)
    };

    // RMS gap over locations actually visited by the flow at each time.
    let mut eval_rng = Rng::new(35);
    let mut sq = 0.0;
    let mut count = 0.0;
    for ti in [0.2, 0.5, 0.8] {
        for _ in 0..2000 {
            let (x_t, _) = hgf::sample_pair(&kind, &m, &mut eval_rng, ti, 5)?;
            let v = out.net.forward(&x_t, Some(ti))?[0];
            let gap = v - conditional(x_t[0], ti)?;
            sq += gap * gap;
            count += 1.0;
        }
    }
    let rms = (sq / count).sqrt();

    // Backward sampling from the exact N(0,1) terminal at t = 1.
    let sched = Schedule::flow_matching(&m, 64, 1e-3)?;
    let predictor = NetPredictor(&out.net);
    let n = 50_000;
    let gen = sampler::heun_sample(&predictor, &sched, &Rng::new(34), n)?;
    let (mean, var) = metrics::moments(&gen)[0];
    let moment_err = (mean - 0.4).abs().max((var - 4.84).abs() / 4.84);
    Outcome::le(
        rms.max(moment_err),
        0.15,
        format!("rms |V - E[v|x_t]| = {rms:.4} on the visited marginal; sample mean {mean:.3}, var {var:.3}"),
    )
}

fn check_edm_equivalence() -> Result<Outcome> {
    let m = GaussianMixture::bimodal_1d();
    let steps = 256;
    let sigmas = sampler::edm_sigma_grid(steps + 1, 1e-3, 80.0, 7.0)?;
    let t_grid = sampler::edm_time_grid(&sigmas)?;
    let edm_pred = SmoothedScoreDrift(&m);
    let osc_pred = AnalyticHvp { kind: HgfKind::Oscillation { alpha: 1.0 }, mixture: &m };
    let mut rng = Rng::new(5);
    let mut worst = 0.0f64;
    for _ in 0..24 {
        let y_init = (sigmas[0] * sigmas[0] + m.second_moment()).sqrt() * rng.normal();
        let y_end = sampler::integrate_backward(&edm_pred, &sigmas, &[y_init], false)?[0];
        let x_init = t_grid[0].cos() * y_init;
        let x_end = sampler::integrate_backward(&osc_pred, &t_grid, &[x_init], false)?[0];
        let mapped = t_grid.last().unwrap().cos() * y_end;
        worst = worst.max((x_end - mapped).abs());
    }
    Outcome::le(worst, 1e-3, "worst endpoint gap over 24 probes, 256 steps")
}

fn check_scale_full() -> Result<Outcome> {
    let m = GaussianMixture::bimodal_1d();
    let alpha = m.natural_alpha();
    let horizon = std::f64::consts::FRAC_PI_2 / alpha;
    let expect_loc = m.second_moment();
    let mut rng = Rng::new(3);
    let mut worst_z = 0.0f64;
    let mut detail = String::new();
    for t in [0.0, horizon / 4.0, horizon / 2.0] {
        let c = hgf::constant_scale_check(&m, alpha, t, 100_000, &mut rng)?;
        let z_loc = (c.location.mean - expect_loc).abs() / c.location.std_error;
        let z_vel = (c.velocity.mean - 1.0).abs() / c.velocity.std_error;
        worst_z = worst_z.max(z_loc).max(z_vel);
        detail.push_str(&format!(
            "t={t:.2}: loc {:.4} vel {:.4}; ",
            c.location.mean, c.velocity.mean
        ));
    }
    Outcome::le(worst_z, 3.0, detail)
}

fn check_snr_direction(artifacts: Option<&std::path::Path>) -> Result<Outcome> {
    let m = GaussianMixture::bimodal_1d();
    let mut rng = Rng::new(12);
    let probe = Mlp::new(MlpConfig::autonomous(1, vec![32, 32]), &mut rng);
    let probe = hsm::dsm_fit(probe, &m, 0.2, 300, 128, 1e-3, &mut rng)?;
    let grid = [0.01, 0.1, 1.0];
    let dsm_rows = hsm::snr_diagnostic(SnrMethod::Dsm, &probe, &m, &grid, 32, 128, 5, 500)?;
    let hsm_rows = hsm::snr_diagnostic(SnrMethod::Hsm, &probe, &m, &grid, 32, 128, 5, 500)?;
    if let Some(dir) = artifacts {
        let mut out = std::io::BufWriter::new(std::fs::File::create(dir.join("snr.csv"))?);
        use std::io::Write;
        writeln!(out, "param_id,method,sigma,mean,std").map_err(hamflow_core::Error::from)?;
        for r in dsm_rows.iter().chain(&hsm_rows) {
            let method = match r.method {
                SnrMethod::Dsm => "dsm",
                SnrMethod::Hsm => "hsm",
            };
            writeln!(out, "{},{},{},{},{}", r.param_id, method, r.noise, r.mean, r.std)
                .map_err(hamflow_core::Error::from)?;
        }
    }
    let dsm_small = hsm::median_snr(&dsm_rows, SnrMethod::Dsm, 0.01);
    let hsm_small = hsm::median_snr(&hsm_rows, SnrMethod::Hsm, 0.01);
    Outcome::ge(
        hsm_small - dsm_small,
        0.0,
        format!("median SNR at smallest noise: hsm {hsm_small:.3} vs dsm {dsm_small:.3}"),
    )
}

fn check_reflection_forward() -> Result<Outcome> {
    let ks = reflection_forward_ks(100_000)?;
    Outcome::le(ks, 0.02, "worst per-dim KS to uniform at t=3, n=1e5")
}

fn check_reflection_trained() -> Result<Outcome> {
    let m = reflect2d_mixture();
    let (lo, hi) = (vec![-1.5, -1.5], vec![1.5, 1.5]);
    let kind = HgfKind::Reflection { lo: lo.clone(), hi: hi.clone() };
    let mut rng = Rng::new(51);
    let net = Mlp::new(MlpConfig::time_conditioned(2, vec![64, 64]), &mut rng);
    let cfg = TrainConfig {
        batch: 512,
        iterations: 8000,
        lr: 2e-3,
        seed: 51,
        antithetic: true,
        tail_average: 0.25,
        ..TrainConfig::default()
    };
    let out = hgf::train_hvp(&kind, &m, net, &cfg, &mut rng)?;
    let sched = Schedule::reflection(lo.clone(), hi.clone(), 3.0, 96, 1e-3)?;
    let predictor = NetPredictor(&out.net);
    let n = 30_000;
    let gen = sampler::heun_sample(&predictor, &sched, &Rng::new(52), n)?;
    let mut data_rng = Rng::new(53);
    let truth: Vec<Vec<f64>> = (0..n)
        .map(|_| hgf::sample_in_box(&m, &lo, &hi, &mut data_rng))
        .collect::<Result<_>>()?;
    let mut worst = 0.0f64;
    for d in 0..2 {
        let gx: Vec<f64> = gen.iter().map(|p| p[d]).collect();
        let tx: Vec<f64> = truth.iter().map(|p| p[d]).collect();
        worst = worst.max(metrics::histogram_tv(&gx, &tx, 40, -1.5, 1.5));
    }
    Outcome::le(worst, 0.15, "worst per-dim histogram TV, trained backward sampler")
}

fn check_hvp_conditional() -> Result<Outcome> {
    let m = GaussianMixture::standard_1d();
    let mut rng = Rng::new(7);
    let net = Mlp::new(MlpConfig::time_conditioned(1, vec![64, 64]), &mut rng);
    let cfg = TrainConfig {
        batch: 512,
        iterations: 12_000,
        lr: 2e-3,
        seed: 7,
        horizon: Some(2.0),
        ..TrainConfig::default()
    };
    let out = hgf::train_hvp(&HgfKind::Diffusion, &m, net, &cfg, &mut rng)?;
    let mut sup: f64 = 0.0;
    for t in [0.1f64, 0.5, 1.0] {
        let mut x = -3.0;
        while x <= 3.0 {
            let v = out.net.forward(&[x], Some(t))?[0];
            sup = sup.max((v - t * x / (1.0 + t * t)).abs());
            x += 0.1;
        }
    }
    Outcome::le(sup, 0.05, "sup |V - tx/(1+t^2)| on [-3,3] x {0.1,0.5,1}")
}

fn check_zero_predictor() -> Result<Outcome> {
    let m = GaussianMixture::standard_1d();
    let kind = HgfKind::Custom { force: ForceField::AnalyticScore(m.clone()), horizon: 1.0 };
    let mut rng = Rng::new(16);
    let net = Mlp::new(MlpConfig::time_conditioned(1, vec![64, 64]), &mut rng);
    let cfg = TrainConfig { batch: 256, iterations: 2000, lr: 1e-3, seed: 16, ..TrainConfig::default() };
    let out = hgf::train_hvp(&kind, &m, net, &cfg, &mut rng)?;
    let mut acc = 0.0;
    let n = 20_000;
    for _ in 0..n {
        let t = rng.uniform(0.0, 1.0);
        let (x_t, _) = hgf::sample_pair(&kind, &m, &mut rng, t, 5)?;
        acc += linalg::norm_sq(&out.net.forward(&x_t, Some(t))?);
    }
    Outcome::le(acc / n as f64, 0.01, "E||V||^2 for the true-score force")
}

fn check_dsm_minimizer() -> Result<Outcome> {
    let m = GaussianMixture::bimodal_1d();
    let sigma = 0.5;
    let mut rng = Rng::new(14);
    let net = Mlp::new(MlpConfig::autonomous(1, vec![64, 64]), &mut rng);
    let net = hsm::dsm_fit_averaged(net, &m, sigma, 12_000, 256, 1e-3, 0.3, &mut rng)?;
    let smoothed = m.smoothed(sigma);
    let mut sup: f64 = 0.0;
    let mut x = -4.0;
    while x <= 4.0 {
        sup = sup.max((net.forward(&[x], None)?[0] - smoothed.score(&[x])?[0]).abs());
        x += 0.25;
    }
    Outcome::le(sup, 0.05, "sup |dsm net - smoothed score| on [-4,4]")
}

fn check_point_mass() -> Result<Outcome> {
    let m = GaussianMixture::single(vec![0.0], 1e-8)?;
    let mut rng = Rng::new(15);
    let net = Mlp::new(MlpConfig::time_conditioned(1, vec![64, 64]), &mut rng);
    let cfg = TrainConfig {
        batch: 384,
        iterations: 6000,
        lr: 2e-3,
        seed: 15,
        antithetic: true,
        tail_average: 0.25,
        ..TrainConfig::default()
    };
    let out = hgf::train_hvp(&HgfKind::Diffusion, &m, net, &cfg, &mut rng)?;
    let mut sup: f64 = 0.0;
    for t in [0.5f64, 1.0] {
        let mut x = -2.0 * t;
        while x <= 2.0 * t {
            sup = sup.max((out.net.forward(&[x], Some(t))?[0] - x / t).abs());
            x += 0.1 * t;
        }
    }
    Outcome::le(sup, 0.05, "sup |V - x/t| near a point mass, t in {0.5, 1}")
}
