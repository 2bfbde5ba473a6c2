use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use nhspace::czd::{cz_decompose, CzOptions};
use nhspace::fixtures::{make_function_family, make_space, Family, FamilyKind, FixtureSpec};
use nhspace::kernels::{KernelMatrix, KernelSpec};
use nhspace::maximal::{maximal_n, sharp_maximal};
use nhspace::norms::{lp_norm, rbmo_norm};
use nhspace::operators::apply;
use nhspace::space::Space;

fn line(n: usize) -> Space {
    make_space(&FixtureSpec::DyadicLine {
        n,
        kappa: 1.0,
        c0: 2.0,
        spacing: None,
    })
    .unwrap()
}

fn signal(space: &Space) -> Vec<f64> {
    make_function_family(space, &Family::plain(FamilyKind::SignedRandom), 1, 7)
        .unwrap()
        .remove(0)
        .into_inner()
}

fn operators(c: &mut Criterion) {
    let mut group = c.benchmark_group("line");
    group.sample_size(10);
    for n in [64, 128] {
        let space = line(n);
        let f = signal(&space);
        let kernel = KernelMatrix::new(&KernelSpec::frac_integral(0.5), &space).unwrap();
        group.bench_with_input(BenchmarkId::new("apply", n), &n, |b, _| {
            b.iter(|| apply(&kernel, &space, black_box(&f)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("maximal_n", n), &n, |b, _| {
            b.iter(|| maximal_n(&space, black_box(&f)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("sharp_maximal", n), &n, |b, _| {
            b.iter(|| sharp_maximal(&space, black_box(&f), 0.5).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("rbmo_norm", n), &n, |b, _| {
            b.iter(|| rbmo_norm(&space, black_box(&f), 2.0).unwrap())
        });
        let t = 1.5 * (2.0 * lp_norm(&space, &f, 1.0).unwrap() / space.total_mass());
        let options = CzOptions {
            gamma0: Some(2.0),
            enforce_level_bound: true,
        };
        group.bench_with_input(BenchmarkId::new("cz_decompose", n), &n, |b, _| {
            b.iter(|| cz_decompose(&space, black_box(&f), 1.0, t, &options).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, operators);
criterion_main!(benches);
