use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use purecma::objectives::elli;
use purecma::{eigendecompose, Engine, NormalSource, StrategyParams, SymMatrix};
use std::hint::black_box;

fn random_spd(n: usize, seed: u64) -> SymMatrix {
    let mut rng = NormalSource::new(seed);
    let a = rng.normal_vector(n * n);
    let mut c = SymMatrix::identity(n);
    for i in 0..n {
        for j in i..n {
            let v: f64 = (0..n).map(|k| a[i * n + k] * a[j * n + k]).sum();
            c.set(i, j, v + if i == j { n as f64 } else { 0.0 });
        }
    }
    c
}

fn bench_eigen(c: &mut Criterion) {
    let mut group = c.benchmark_group("eigendecompose");
    for n in [5, 10, 20, 40] {
        let m = random_spd(n, n as u64);
        group.bench_with_input(BenchmarkId::from_parameter(n), &m, |b, m| {
            b.iter(|| eigendecompose(black_box(m)).unwrap())
        });
    }
    group.finish();
}

fn bench_generation(c: &mut Criterion) {
    let mut group = c.benchmark_group("ask_tell_elli");
    for n in [5, 10, 20, 40] {
        group.bench_function(BenchmarkId::from_parameter(n), |b| {
            let fresh =
                || Engine::new(StrategyParams::new(n).unwrap(), vec![1.0; n], 0.5, 1).unwrap();
            let mut engine = fresh();
            b.iter(|| {
                if engine.sigma() < 1e-10 {
                    engine = fresh();
                }
                let mut cands = engine.ask();
                for cand in &mut cands {
                    cand.fitness = Some(elli(&cand.x));
                }
                black_box(engine.tell(&cands).unwrap())
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_eigen, bench_generation);
criterion_main!(benches);
