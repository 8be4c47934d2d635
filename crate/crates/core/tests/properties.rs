mod common;

use common::{cube_pair, dense_block, frobenius_rel, kernels, random_vector};
use hodlr3d::lowrank::KernelBlock;
use hodlr3d::{
    aca_compress, build_interaction_lists, classify_pair, comm_ledger, eval_entry, generate_points, gmres, lr_apply,
    numerical_rank, parallel_matvec, AcaOptions, AdmissibilityClass, CommKind, Cube, Distribution, Domain,
    GmresOptions, HMatrix, HMatrixOptions, KernelSpec, Octree, PartitionPlan, Point3, Variant,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn variant() -> impl Strategy<Value = Variant> {
    prop::sample::select(Variant::ALL.to_vec())
}

fn kernel() -> impl Strategy<Value = KernelSpec> {
    (0usize..3).prop_map(|k| kernels()[k].clone())
}

fn admissible_class() -> impl Strategy<Value = AdmissibilityClass> {
    prop::sample::select(vec![AdmissibilityClass::WellSeparated, AdmissibilityClass::Vertex])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_is_symmetric(k in kernel(), seed in any::<u64>(), i in 0usize..40, j in 0usize..40) {
        prop_assume!(i != j);
        let pts = generate_points(Distribution::UniformRandom, 40, seed).unwrap();
        prop_assert_eq!(eval_entry(&k, &pts, i, j).unwrap(), eval_entry(&k, &pts, j, i).unwrap());
    }

    #[test]
    fn kernel_is_translation_invariant(
        k in kernel(),
        seed in any::<u64>(),
        t in prop::array::uniform3(-5.0f64..5.0),
    ) {
        let pts = generate_points(Distribution::UniformRandom, 20, seed).unwrap();
        let moved = pts.translated(Point3::new(t[0], t[1], t[2]));
        for i in 0..20 {
            for j in 0..20 {
                let a = eval_entry(&k, &pts, i, j).unwrap();
                let b = eval_entry(&k, &moved, i, j).unwrap();
                prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn classification_is_symmetric(level in 1u32..6, a in prop::array::uniform3(0u32..32), b in prop::array::uniform3(0u32..32)) {
        let side = 1u32 << level;
        let ca = Cube::new(level, a.map(|v| v % side)).unwrap();
        let cb = Cube::new(level, b.map(|v| v % side)).unwrap();
        prop_assert_eq!(classify_pair(&ca, &cb).unwrap(), classify_pair(&cb, &ca).unwrap());
    }

    #[test]
    fn blocks_cover_the_matrix(v in variant(), n in 1usize..3000, n_max in 8usize..300, seed in any::<u64>()) {
        let pts = generate_points(Distribution::UniformRandom, n, seed).unwrap();
        let tree = hodlr3d::build_tree(&pts, n_max, Domain::default()).unwrap();
        let lists = build_interaction_lists(&tree, v);
        prop_assert_eq!(lists.coverage(&tree), (n as u128) * (n as u128));
    }

    #[test]
    fn forced_depth_blocks_cover_the_matrix(v in variant(), depth in 0usize..4, seed in any::<u64>()) {
        let pts = generate_points(Distribution::UniformRandom, 700, seed).unwrap();
        let tree = Octree::with_depth(&pts, depth, Domain::default()).unwrap();
        let lists = build_interaction_lists(&tree, v);
        prop_assert_eq!(lists.coverage(&tree), 700u128 * 700);
    }

    #[test]
    fn load_is_balanced(n_p in 1usize..80, level in 0usize..5) {
        let loads = PartitionPlan::new(n_p).unwrap().level_loads(level);
        let max = loads.iter().max().unwrap();
        let min = loads.iter().min().unwrap();
        prop_assert!(max - min <= 1, "{:?}", loads);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn numerical_rank_is_monotone_in_eps(seed in any::<u64>(), m in 2usize..30, n in 2usize..30, e1 in -14i32..-1, e2 in -14i32..-1) {
        let x = random_vector(m * n, seed);
        let a = DMatrix::from_row_slice(m, n, &x);
        let (lo, hi) = (e1.min(e2), e1.max(e2));
        prop_assert!(numerical_rank(&a, 10f64.powi(lo)) >= numerical_rank(&a, 10f64.powi(hi)));
    }

    #[test]
    fn aca_reconstructs_admissible_blocks(
        k in kernel(),
        class in admissible_class(),
        m in 8usize..200,
        n in 8usize..200,
        e in -10i32..-4,
        seed in any::<u64>(),
    ) {
        let eps = 10f64.powi(e);
        let c = cube_pair(class, m, n, seed);
        let entries = KernelBlock::new(&k, &c, 0..m, m..m + n);
        let block = aca_compress(&entries, &AcaOptions::new(eps)).unwrap();
        let exact = dense_block(&k, &c, 0..m, m..m + n);
        let err = frobenius_rel(&block.to_dense(&entries), &exact);
        prop_assert!(err <= 10.0 * eps, "error {err:e} at eps {eps:e}, rank {}", block.rank());
    }

    #[test]
    fn lr_apply_matches_dense_approximant(class in admissible_class(), m in 4usize..120, n in 4usize..120, seed in any::<u64>()) {
        let k = KernelSpec::laplace3d();
        let c = cube_pair(class, m, n, seed);
        let entries = KernelBlock::new(&k, &c, 0..m, m..m + n);
        let block = aca_compress(&entries, &AcaOptions::new(1e-8)).unwrap();
        let d = block.to_dense(&entries);
        let x = random_vector(n, seed ^ 1);
        let mut y = vec![0.0; m];
        lr_apply(&block, &entries, &x, &mut y).unwrap();
        let reference: Vec<f64> = d.chunks(n).map(|row| row.iter().zip(&x).map(|(a, b)| a * b).sum()).collect();
        prop_assert!(frobenius_rel(&y, &reference) < 1e-10);
    }

    #[test]
    fn gmres_residuals_never_increase(seed in any::<u64>(), n in 2usize..40, restart in prop::option::of(2usize..10)) {
        let r = random_vector(n * n, seed);
        let a: Vec<f64> = (0..n * n).map(|k| if k % (n + 1) == 0 { 4.0 + r[k] } else { r[k] / n as f64 }).collect();
        let op = hodlr3d::solver::DenseOperator::new(n, a).unwrap();
        let f = random_vector(n, seed ^ 7);
        let opts = GmresOptions { restart, ..GmresOptions::default() };
        let res = gmres(&op, &f, &opts).unwrap();
        prop_assert!(res.converged);
        for w in res.residuals.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", res.residuals);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn construction_is_deterministic(v in variant(), seed in any::<u64>()) {
        let pts = generate_points(Distribution::UniformRandom, 1200, seed).unwrap();
        let opts = HMatrixOptions::new(v).n_max(40);
        let a = HMatrix::new(&pts, &KernelSpec::laplace3d(), &opts).unwrap();
        let b = HMatrix::new(&pts, &KernelSpec::laplace3d(), &opts).unwrap();
        let x = random_vector(1200, seed);
        prop_assert_eq!(a.matvec(&x).unwrap(), b.matvec(&x).unwrap());
    }

    #[test]
    fn parallel_product_matches_serial(v in variant(), n_p in 1usize..20, seed in any::<u64>()) {
        let pts = generate_points(Distribution::UniformRandom, 1000, seed).unwrap();
        let rep = HMatrix::new(&pts, &KernelSpec::laplace3d(), &HMatrixOptions::new(v).n_max(30)).unwrap();
        let x = random_vector(1000, seed);
        let serial = rep.matvec(&x).unwrap();
        let par = parallel_matvec(&rep, &x, n_p).unwrap();
        prop_assert!(hodlr3d::relative_error(&par.y, &serial) <= 1e-12);
        let again = parallel_matvec(&rep, &x, n_p).unwrap();
        prop_assert_eq!(par.y, again.y);
    }

    #[test]
    fn ledger_counts_group_times_rank(n_p in 9usize..100, seed in any::<u64>()) {
        let pts = generate_points(Distribution::UniformRandom, 1500, seed).unwrap();
        let rep = HMatrix::new(&pts, &KernelSpec::laplace3d(), &HMatrixOptions::new(Variant::Hodlr).n_max(25)).unwrap();
        let plan = PartitionPlan::new(n_p).unwrap();
        let ledger = comm_ledger(&rep, &plan);
        let mut expected = 0u64;
        for level in 1..=rep.depth() {
            let g = plan.group_size(level) as u64;
            if g == 1 {
                continue;
            }
            for i in 0..rep.tree().level(level).len() {
                for k in 0..rep.far_blocks(level, i).len() {
                    expected += g * rep.rank(level, i, k) as u64;
                }
            }
        }
        prop_assert_eq!(ledger.floats_of(CommKind::LowRankExchange), expected);
        prop_assert_eq!(ledger.floats_of(CommKind::Gather), ((n_p - 1) * 1500) as u64);
    }
}
