use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hodlr3d::lowrank::KernelBlock;
use hodlr3d::{
    aca_compress, build_tree, AcaOptions, Coords, Domain, HMatrix, HMatrixOptions, KernelSpec, Point3, Variant,
};
use hodlr3d_bench::cloud;

fn aca(c: &mut Criterion) {
    let mut g = c.benchmark_group("aca");
    let kernel = KernelSpec::laplace3d();
    for n in [256usize, 1024] {
        // Two unit cubes sharing a vertex.
        let pts = cloud(2 * n);
        let shifted: Vec<Point3> = pts
            .points()
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let q = Point3::new(0.5 * (p.x + 1.0), 0.5 * (p.y + 1.0), 0.5 * (p.z + 1.0));
                if i < n {
                    q
                } else {
                    q.translated(Point3::new(1.0, 1.0, 1.0))
                }
            })
            .collect();
        let coords = Coords::from_points(&shifted);
        let block = KernelBlock::new(&kernel, &coords, 0..n, n..2 * n);
        g.bench_with_input(BenchmarkId::new("vertex", n), &block, |b, e| {
            b.iter(|| aca_compress(e, &AcaOptions::new(1e-7)).unwrap())
        });
    }
    g.finish();
}

fn construction(c: &mut Criterion) {
    let mut g = c.benchmark_group("construction");
    g.sample_size(10);
    let n = 8192;
    let pts = cloud(n);
    g.bench_function("octree", |b| {
        b.iter(|| build_tree(&pts, 216, Domain::default()).unwrap())
    });
    for v in Variant::ALL {
        g.bench_function(BenchmarkId::new("initialize", v.as_str()), |b| {
            b.iter(|| HMatrix::new(&pts, &KernelSpec::laplace3d(), &HMatrixOptions::new(v)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, aca, construction);
criterion_main!(benches);
