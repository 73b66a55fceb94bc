use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use hamflow_bench::{bimodal, probe_force, probe_net};
use hamflow_core::dynamics::{leapfrog, ForceField, PhaseState};
use hamflow_core::hgf::{analytic_hvp, HgfKind};
use hamflow_core::metrics::energy_distance;
use hamflow_core::net::Tape;
use hamflow_core::rng::Rng;
use hamflow_core::sampler::{heun_sample, AnalyticHvp, Schedule};
use std::hint::black_box;

fn bench_gmm(c: &mut Criterion) {
    let m = bimodal();
    c.bench_function("gmm_score", |b| {
        b.iter(|| black_box(m.score(black_box(&[0.7])).unwrap()))
    });
    c.bench_function("analytic_hvp_oscillation", |b| {
        let kind = HgfKind::Oscillation { alpha: m.natural_alpha() };
        b.iter(|| black_box(analytic_hvp(&kind, &m, black_box(&[0.7]), 0.9).unwrap()))
    });
}

fn bench_leapfrog(c: &mut Criterion) {
    let m = bimodal();
    let force = ForceField::AnalyticScore(m);
    let s = PhaseState::new(vec![0.3], vec![-0.8]).unwrap();
    c.bench_function("leapfrog_5_steps_analytic_score", |b| {
        b.iter(|| black_box(leapfrog(&force, &s, 0.0, 1.0, 5).unwrap()))
    });

    let net = probe_force(1, vec![64, 64], 3);
    let learned = ForceField::Learned { net, time_dependent: false };
    c.bench_function("leapfrog_5_steps_learned_force", |b| {
        b.iter(|| black_box(leapfrog(&learned, &s, 0.0, 1.0, 5).unwrap()))
    });
}

fn bench_tape(c: &mut Criterion) {
    let net = probe_net(1, vec![64, 64], 7);
    c.bench_function("mlp_forward_plain", |b| {
        b.iter(|| black_box(net.forward(black_box(&[0.4]), Some(0.6)).unwrap()))
    });
    c.bench_function("mlp_forward_backward_taped", |b| {
        b.iter_batched(
            Tape::new,
            |mut tape| {
                let binding = net.bind(&mut tape);
                let x = tape.leaf(&[0.4]);
                let t = tape.leaf_scalar(0.6);
                let out = net.forward_taped(&mut tape, &binding, x, Some(t));
                let loss = tape.sq_norm(out);
                black_box(net.grad_flat(&binding, &tape.backward(loss)))
            },
            BatchSize::SmallInput,
        )
    });
}

fn bench_sampling(c: &mut Criterion) {
    let m = bimodal();
    let alpha = m.natural_alpha();
    let sched = Schedule::oscillation(&m, alpha, 32, 0.0).unwrap();
    let predictor = AnalyticHvp { kind: HgfKind::Oscillation { alpha }, mixture: &m };
    c.bench_function("heun_sample_256", |b| {
        b.iter(|| black_box(heun_sample(&predictor, &sched, &Rng::new(5), 256).unwrap()))
    });

    let mut rng = Rng::new(8);
    let a = m.sample(&mut rng, 10_000);
    let bm = m.sample(&mut rng, 10_000);
    c.bench_function("energy_distance_1d_10k", |b| {
        b.iter(|| black_box(energy_distance(black_box(&a), black_box(&bm))))
    });
}

criterion_group!(benches, bench_gmm, bench_leapfrog, bench_tape, bench_sampling);
criterion_main!(benches);
