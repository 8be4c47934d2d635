use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hodlr3d::{parallel_matvec, Variant};
use hodlr3d_bench::{representation, vector};

fn serial(c: &mut Criterion) {
    let mut g = c.benchmark_group("matvec");
    g.sample_size(10);
    for n in [4096usize, 16384] {
        let x = vector(n);
        for v in Variant::ALL {
            let rep = representation(n, v);
            g.bench_with_input(BenchmarkId::new(v.as_str(), n), &x, |b, x| {
                b.iter(|| rep.matvec(x).unwrap())
            });
        }
    }
    g.finish();
}

fn parallel(c: &mut Criterion) {
    let mut g = c.benchmark_group("parallel_matvec");
    g.sample_size(10);
    let n = 16384;
    let rep = representation(n, Variant::Hodlr3d);
    let x = vector(n);
    for n_p in [1usize, 2, 4, 8] {
        g.bench_with_input(BenchmarkId::from_parameter(n_p), &n_p, |b, &n_p| {
            b.iter(|| parallel_matvec(&rep, &x, n_p).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, serial, parallel);
criterion_main!(benches);
