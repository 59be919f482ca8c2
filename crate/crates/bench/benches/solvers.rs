use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use ilab::estimators::{gd_train, max_margin, two_phase_learn, PenaltyKind, TrainConfig};
use ilab::verifier::{min_weighted_beta, GramData};
use ilab::{rng, ProblemInstance};

fn instance(d: usize, n: (usize, usize), seed: u64) -> ProblemInstance {
    let sigma = 1.0 / (d as f64).sqrt();
    ProblemInstance::sample(d, (0.2, 0.2), (1.0, 0.0), n, sigma, seed).unwrap()
}

fn bench_max_margin(c: &mut Criterion) {
    let mut g = c.benchmark_group("max_margin");
    for d in [200, 2000] {
        let data = instance(d, (40, 40), 1).sample_default().unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(d), &data, |b, data| b.iter(|| max_margin(black_box(data), 1e-9).unwrap()));
    }
    g.finish();
}

fn bench_program(c: &mut Criterion) {
    let mut g = c.benchmark_group("min_weighted_beta");
    for n in [20, 60] {
        let inst = instance(20 * n, (n / 2, n - n / 2), 2);
        let data = inst.sample_default().unwrap();
        let mut gd = GramData::normalized(&data, inst.sigma, 0.0, 0.0).unwrap();
        gd.gamma = 0.5 * gd.max_margin().unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &gd, |b, gd| b.iter(|| min_weighted_beta(black_box(gd), 1e-10).unwrap()));
    }
    g.finish();
}

fn bench_gd(c: &mut Criterion) {
    let data = instance(1000, (160, 20), 3).sample_default().unwrap();
    let mut g = c.benchmark_group("gd_train_200_iters");
    for kind in PenaltyKind::ALL {
        let cfg = TrainConfig { max_iters: 200, penalty_kind: kind, penalty_weight: 1.0, log_every: usize::MAX, ..Default::default() };
        g.bench_function(format!("{kind:?}"), |b| b.iter(|| gd_train(black_box(&data), &cfg).unwrap()));
    }
    g.finish();
}

fn bench_two_phase(c: &mut Criterion) {
    let data = instance(5000, (160, 20), 4).sample_default().unwrap();
    let (s1, s2) = (data.env_subset(1), data.env_subset(2));
    c.bench_function("two_phase_learn", |b| {
        b.iter(|| {
            let mut r = rng::stream(0, &[rng::purpose::METHOD]);
            two_phase_learn(&s1, &s2, &mut r).unwrap()
        })
    });
}

criterion_group!(benches, bench_max_margin, bench_program, bench_gd, bench_two_phase);
criterion_main!(benches);
