//! The five subcommands behind the binary.

use crate::config::{ExperimentConfig, KindName, Resolved};
use crate::output::{self, Metadata};
use hamflow_core::checkpoint;
use hamflow_core::hgf::{self, HgfKind};
use hamflow_core::hsm;
use hamflow_core::metrics;
use hamflow_core::net::{Mlp, MlpConfig};
use hamflow_core::sampler::{self, AnalyticHvp, NetPredictor, Schedule};
use hamflow_core::{Error, Result, Rng};
use serde::Serialize;
use std::path::{Path, PathBuf};

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

pub fn train_hvp(
    config_path: &Path,
    out_dir: &Path,
    seed_override: Option<u64>,
    iterations_override: Option<usize>,
) -> Result<()> {
    let resolved = ExperimentConfig::load(config_path)?;
    ensure_dir(out_dir)?;
    let mut cfg = resolved.train_config(seed_override)?;
    if let Some(iters) = iterations_override {
        cfg.iterations = iters;
    }
    let mut rng = Rng::new(cfg.seed);
    let net = Mlp::new(resolved.velocity_net_config(), &mut rng);
    let trained = hgf::train_hvp(&resolved.kind, &resolved.mixture, net, &cfg, &mut rng)?;

    checkpoint::save_mlp(
        &trained.net,
        &resolved.config_hash,
        &out_dir.join("checkpoint.json"),
    )?;
    output::write_csv(
        &out_dir.join("loss.csv"),
        &["iteration", "loss"],
        trained
            .losses
            .iter()
            .enumerate()
            .map(|(i, l)| [i as f64, *l]),
    )?;

    #[derive(Serialize)]
    struct Details {
        kind: String,
        iterations: usize,
        final_loss: Option<f64>,
        checkpoint_sha256: String,
    }
    output::write_metadata(
        &out_dir.join("metadata.json"),
        &Metadata {
            command: "train-hvp",
            seed: cfg.seed,
            config_hash: &resolved.config_hash,
            unix_time: output::now_unix(),
            details: Details {
                kind: kind_name(&resolved.kind),
                iterations: cfg.iterations,
                final_loss: trained.losses.last().copied(),
                checkpoint_sha256: checkpoint::weights_digest(&trained.net),
            },
        },
    )?;
    Ok(())
}

pub fn train_hsm(config_path: &Path, out_dir: &Path, seed_override: Option<u64>) -> Result<()> {
    let resolved = ExperimentConfig::load(config_path)?;
    ensure_dir(out_dir)?;
    let cfg = resolved.hsm_config(seed_override);
    let mut rng = Rng::new(cfg.seed ^ 0xF0F0);
    let force_net = Mlp::new(
        MlpConfig::autonomous(resolved.mixture.dim(), resolved.config.hsm.force_hidden.clone()),
        &mut rng,
    );
    let v_net = Mlp::new(resolved.velocity_net_config(), &mut rng);
    let run = hsm::train_hsm(force_net, v_net, &resolved.mixture, &cfg)?;

    checkpoint::save_mlp(&run.force, &resolved.config_hash, &out_dir.join("force.json"))?;
    checkpoint::save_mlp(&run.velocity, &resolved.config_hash, &out_dir.join("velocity.json"))?;
    output::write_csv(
        &out_dir.join("diagnostics.csv"),
        &["iteration", "esm", "hsd_proxy", "v_loss"],
        run.diagnostics
            .iter()
            .map(|d| [d.iter as f64, d.esm, d.hsd_proxy, d.v_loss]),
    )?;

    #[derive(Serialize)]
    struct Details {
        final_esm: Option<f64>,
        warnings: Vec<String>,
        force_sha256: String,
    }
    output::write_metadata(
        &out_dir.join("metadata.json"),
        &Metadata {
            command: "train-hsm",
            seed: cfg.seed,
            config_hash: &resolved.config_hash,
            unix_time: output::now_unix(),
            details: Details {
                final_esm: run.diagnostics.last().map(|d| d.esm),
                warnings: run.warnings.clone(),
                force_sha256: checkpoint::weights_digest(&run.force),
            },
        },
    )?;
    Ok(())
}

fn kind_name(kind: &HgfKind) -> String {
    match kind {
        HgfKind::Diffusion => "diffusion".into(),
        HgfKind::FlowMatching => "flow-matching".into(),
        HgfKind::Oscillation { alpha } => format!("oscillation(alpha={alpha})"),
        HgfKind::Reflection { .. } => "reflection".into(),
        HgfKind::Custom { .. } => "custom".into(),
    }
}

/// Build the backward schedule for a kind. Analytic (oracle) predictors
/// integrate to exactly zero; learned ones stop at the configured floor and
/// finish with an Euler step.
pub fn schedule_for(resolved: &Resolved, steps: usize, oracle: bool) -> Result<Schedule> {
    let t_min = if oracle { 0.0 } else { resolved.config.schedule.t_min };
    let m = &resolved.mixture;
    match (&resolved.kind, resolved.config.model.kind) {
        (HgfKind::Diffusion, _) => Schedule::diffusion(m, HgfKind::Diffusion.horizon(), steps, t_min),
        (HgfKind::FlowMatching, _) => Schedule::flow_matching(m, steps, t_min),
        (HgfKind::Oscillation { alpha }, _) => Schedule::oscillation(m, *alpha, steps, t_min),
        (HgfKind::Reflection { lo, hi }, KindName::Reflection) => Schedule::reflection(
            lo.clone(),
            hi.clone(),
            resolved.kind.horizon(),
            steps,
            t_min,
        ),
        _ => Err(Error::invalid("unsupported kind for sampling")),
    }
}

pub struct SampleArgs {
    pub config: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub oracle: bool,
    pub steps: usize,
    pub n: usize,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
}

pub fn sample(args: &SampleArgs) -> Result<()> {
    let resolved = ExperimentConfig::load(&args.config)?;
    ensure_dir(&args.out_dir)?;
    let seed = args.seed.unwrap_or(resolved.config.seed);
    let sched = schedule_for(&resolved, args.steps, args.oracle)?;
    let rng = Rng::new(seed);

    let (samples, checkpoint_sha) = if args.oracle {
        match resolved.kind {
            HgfKind::Diffusion | HgfKind::Oscillation { .. } => {}
            _ => {
                return Err(Error::invalid(
                    "--oracle requires a kind with an analytic conditional velocity (diffusion or oscillation)",
                ))
            }
        }
        let predictor = AnalyticHvp { kind: resolved.kind.clone(), mixture: &resolved.mixture };
        (sampler::heun_sample(&predictor, &sched, &rng, args.n)?, String::new())
    } else {
        let path = args
            .checkpoint
            .as_ref()
            .ok_or_else(|| Error::invalid("either --checkpoint or --oracle is required"))?;
        let (net, _) = checkpoint::load_mlp(path)?;
        let sha = checkpoint::weights_digest(&net);
        let predictor = NetPredictor(&net);
        (sampler::heun_sample(&predictor, &sched, &rng, args.n)?, sha)
    };

    output::write_samples_csv(&args.out_dir.join("samples.csv"), &samples)?;

    #[derive(Serialize)]
    struct Details {
        kind: String,
        n: usize,
        steps: usize,
        oracle: bool,
        grid_start: f64,
        grid_end: f64,
        checkpoint_sha256: String,
        terminal_variance_gap: f64,
    }
    output::write_metadata(
        &args.out_dir.join("metadata.json"),
        &Metadata {
            command: "sample",
            seed,
            config_hash: &resolved.config_hash,
            unix_time: output::now_unix(),
            details: Details {
                kind: kind_name(&resolved.kind),
                n: args.n,
                steps: args.steps,
                oracle: args.oracle,
                grid_start: sched.grid[0],
                grid_end: *sched.grid.last().unwrap(),
                checkpoint_sha256: checkpoint_sha,
                terminal_variance_gap: sched.terminal_variance_gap(&resolved.kind, &resolved.mixture),
            },
        },
    )?;
    Ok(())
}

/// Metrics of a sample file against the analytic mixture.
#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub energy_distance: f64,
    pub self_distance_baseline: f64,
    pub distance_ratio: f64,
    pub sliced_w2: f64,
    pub moments: Vec<MomentRow>,
}

#[derive(Debug, Serialize)]
pub struct MomentRow {
    pub dim: usize,
    pub sample_mean: f64,
    pub sample_var: f64,
    pub mixture_mean: f64,
}

pub fn eval(samples_path: &Path, config_path: &Path, out: Option<&Path>, seed: u64) -> Result<EvalReport> {
    let resolved = ExperimentConfig::load(config_path)?;
    let m = &resolved.mixture;
    let samples = output::read_samples_csv(samples_path)?;
    if samples.is_empty() {
        return Err(Error::invalid("samples CSV has no rows"));
    }
    if samples[0].len() != m.dim() {
        return Err(Error::DimensionMismatch { expected: m.dim(), got: samples[0].len() });
    }
    let n = samples.len();
    let root = Rng::new(seed ^ 0xE7A1);

    // Pair-averaged noise floor and generated-vs-true distance: a single
    // energy-distance draw at this sample size fluctuates on the order of
    // its own mean.
    let pairs = 8u64;
    let mut floor = 0.0;
    for k in 0..pairs {
        let a = m.sample(&mut root.split(2 * k), n);
        let b = m.sample(&mut root.split(2 * k + 1), n);
        floor += metrics::energy_distance(&a, &b);
    }
    let floor = floor / pairs as f64;
    let mut dist = 0.0;
    for k in 0..pairs {
        let t = m.sample(&mut root.split(1000 + k), n);
        dist += metrics::energy_distance(&samples, &t);
    }
    let dist = dist / pairs as f64;

    let truth = m.sample(&mut root.split(5000), n);
    let sliced = metrics::sliced_w2(&samples, &truth, 16, &mut root.split(6000));

    let mix_mean = m.mean();
    let moments = metrics::moments(&samples)
        .into_iter()
        .enumerate()
        .map(|(dim, (sample_mean, sample_var))| MomentRow {
            dim,
            sample_mean,
            sample_var,
            mixture_mean: mix_mean[dim],
        })
        .collect();

    let report = EvalReport {
        n,
        energy_distance: dist,
        self_distance_baseline: floor,
        distance_ratio: dist / floor,
        sliced_w2: sliced,
        moments,
    };
    let json = serde_json::to_string_pretty(&report)?;
    match out {
        Some(path) => std::fs::write(path, &json)?,
        None => println!("{json}"),
    }
    Ok(report)
}
