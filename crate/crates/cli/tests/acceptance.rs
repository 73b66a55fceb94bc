//! Acceptance suite: one test per criterion, each printing a pass/fail
//! line. The trained-model criteria share a single full validation run.
//!
//! Criteria and tolerances:
//!  1. closed-form discrepancy at t in {0.1, 0.5, 1.0}, 10% relative
//!  2. small-time Taylor law at t = 0.1 within 0.02 of 1
//!  3. discrepancy/ESM Pearson correlation >= 0.8 over >= 10 snapshots
//!  4. min-max training reaches oracle ESM <= 0.1 (mixture), <= 0.02 (normal)
//!  5. diffusion velocity loss == denoising score matching to 1e-12
//!  6. oscillation sampling <= 1.5x noise floor (oracle), <= 3x (trained)
//!  7. leapfrog drift order >= 1.9 and |det J - 1| <= 1e-6
//!  8. rotation-frame vs plain-noise ODE endpoints within 1e-3
//!  9. flow scales constant over t within 3 standard errors
//! 10. median gradient SNR at the smallest noise: trajectory >= denoising
//! 11. reflection: forward KS <= 0.02, trained backward TV <= 0.15
//! 12. `validate fast` green under 2 minutes, full suite under 1 hour

use hamflow_cli::validate::{run, CheckResult, Level, ValidationReport};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

struct FullRun {
    report: ValidationReport,
    seconds: f64,
}

fn full() -> &'static FullRun {
    static FULL: OnceLock<FullRun> = OnceLock::new();
    FULL.get_or_init(|| {
        let start = Instant::now();
        let report = run(Level::Full);
        FullRun { report, seconds: start.elapsed().as_secs_f64() }
    })
}

fn check(name: &str) -> &'static CheckResult {
    full()
        .report
        .get(name)
        .unwrap_or_else(|| panic!("check {name} missing from the full report"))
}

fn report_line(criterion: &str, passed: bool, detail: &str) {
    println!(
        "criterion {criterion}: {} — {detail}",
        if passed { "PASS" } else { "FAIL" }
    );
    assert!(passed, "criterion {criterion}: {detail}");
}

#[test]
fn criterion_01_closed_form_hsd() {
    for (name, t) in [
        ("hsd_closed_form_t01", 0.1f64),
        ("hsd_closed_form_t05", 0.5),
        ("hsd_closed_form_t10", 1.0),
    ] {
        let c = check(name);
        let within = c.value <= 0.10;
        let fast_enough = c.seconds < 120.0;
        report_line(
            &format!("1 (t={t})"),
            within && fast_enough,
            &format!("relative error {:.4} (tol 0.10), {:.0}s: {}", c.value, c.seconds, c.detail),
        );
    }
}

#[test]
fn criterion_02_taylor_law() {
    let c = check("taylor_law_t01");
    report_line(
        "2",
        c.value <= 0.02,
        &format!("|ratio - 1| = {:.4} (tol 0.02): {}", c.value, c.detail),
    );
}

#[test]
fn criterion_03_hsd_esm_correlation() {
    let c = check("esm_hsd_correlation");
    report_line(
        "3",
        c.value >= 0.8 && c.seconds < 1800.0,
        &format!("pearson r = {:.4} (>= 0.8), {:.0}s: {}", c.value, c.seconds, c.detail),
    );
}

#[test]
fn criterion_04_hsm_learns_the_score() {
    let gauss = check("hsm_learns_score_gauss1d");
    report_line(
        "4 (gauss1d)",
        gauss.value <= 0.02,
        &format!("oracle ESM {:.4} (tol 0.02)", gauss.value),
    );
    let mixture = check("hsm_learns_score_gmm1d");
    report_line(
        "4 (gmm1d)",
        mixture.value <= 0.1,
        &format!("oracle ESM / weighted MSE {:.4} (tol 0.1): {}", mixture.value, mixture.detail),
    );
}

#[test]
fn criterion_05_diffusion_equals_dsm() {
    let c = check("dsm_equivalence_bitwise");
    report_line(
        "5",
        c.value <= 1e-12,
        &format!("worst relative gap {:.2e} (tol 1e-12): {}", c.value, c.detail),
    );
}

#[test]
fn criterion_06_exact_predictor_generation() {
    let oracle = check("oscillation_oracle_sampling");
    report_line(
        "6 (oracle)",
        oracle.value <= 1.5,
        &format!("distance ratio {:.2} (tol 1.5x floor): {}", oracle.value, oracle.detail),
    );
    let trained = check("oscillation_trained_sampling");
    report_line(
        "6 (trained)",
        trained.value <= 3.0,
        &format!("distance ratio {:.2} (tol 3x floor): {}", trained.value, trained.detail),
    );
}

#[test]
fn criterion_07_integrator_invariants() {
    let drift = check("energy_drift_order");
    report_line(
        "7 (energy)",
        drift.value >= 1.9,
        &format!("observed drift order {:.3} (>= 1.9)", drift.value),
    );
    let volume = check("symplectic_volume");
    report_line(
        "7 (volume)",
        volume.value <= 1e-6,
        &format!("|det J - 1| = {:.2e} (tol 1e-6): {}", volume.value, volume.detail),
    );
}

#[test]
fn criterion_08_edm_equivalence() {
    let c = check("edm_endpoint_equivalence");
    report_line(
        "8",
        c.value <= 1e-3,
        &format!("worst endpoint gap {:.2e} (tol 1e-3, 256 steps)", c.value),
    );
}

#[test]
fn criterion_09_constant_scales() {
    let c = check("constant_scale_full");
    report_line(
        "9",
        c.value <= 3.0,
        &format!("worst z-score {:.2} (tol 3 MC standard errors): {}", c.value, c.detail),
    );
}

#[test]
fn criterion_10_snr_direction() {
    let c = check("snr_direction");
    report_line(
        "10",
        c.value >= 0.0,
        &format!("median SNR margin at the smallest noise level: {}", c.detail),
    );
}

#[test]
fn criterion_11_reflection_hgf() {
    let forward = check("reflection_forward_ks");
    report_line(
        "11 (forward)",
        forward.value <= 0.02,
        &format!("KS to uniform {:.4} (tol 0.02, n=1e5)", forward.value),
    );
    let backward = check("reflection_trained_tv");
    report_line(
        "11 (backward)",
        backward.value <= 0.15,
        &format!("per-dim histogram TV {:.4} (tol 0.15)", backward.value),
    );
}

#[test]
fn criterion_12_validation_suite_budgets() {
    // The fast suite through the real binary, timed.
    let start = Instant::now();
    let output = Command::new(env!("CARGO_BIN_EXE_hamflow"))
        .args(["validate", "--level", "fast"])
        .output()
        .expect("binary runs");
    let fast_seconds = start.elapsed().as_secs_f64();
    let fast_ok = output.status.success();
    report_line(
        "12 (fast)",
        fast_ok && fast_seconds < 120.0,
        &format!("exit {:?} in {fast_seconds:.0}s (limit 120s)", output.status.code()),
    );

    let full_run = full();
    report_line(
        "12 (full)",
        full_run.report.all_passed && full_run.seconds < 3600.0,
        &format!(
            "{} checks, all_passed={} in {:.0}s (limit 3600s)",
            full_run.report.results.len(),
            full_run.report.all_passed,
            full_run.seconds
        ),
    );
}

#[test]
fn every_full_check_passes() {
    let mut failures = Vec::new();
    for c in &full().report.results {
        if !c.passed {
            failures.push(format!("{}: value {} {} {} ({})", c.name, c.value, c.op, c.threshold, c.detail));
        }
    }
    assert!(failures.is_empty(), "failing checks:\n{}", failures.join("\n"));
}
