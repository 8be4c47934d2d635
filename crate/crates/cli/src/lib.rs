//! Experiment drivers behind the `hodlr3d` binary. Every driver returns a
//! [`Table`] that is written as CSV with the run configuration as a leading
//! `#` comment.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use hodlr3d::hmatrix::direct_rows;
use hodlr3d::lowrank::{rank_sweep, STUDY_CLASSES};
use hodlr3d::octree::{full_census, CensusTotal};
use hodlr3d::{
    build_interaction_lists, generate_points, ie_experiment, parallel_matvec, relative_error, AdmissibilityClass,
    Distribution, Domain, HMatrix, HMatrixOptions, KernelSpec, Octree, Variant,
};

/// Environment variable overriding `--np`.
pub const WORKERS_ENV: &str = "HODLR3D_NUM_WORKERS";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Census,
    RankStudy,
    MatvecBench,
    SolveIe,
    ParallelBench,
}

impl Command {
    pub const ALL: [Command; 5] = [
        Command::Census,
        Command::RankStudy,
        Command::MatvecBench,
        Command::SolveIe,
        Command::ParallelBench,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Census => "census",
            Command::RankStudy => "rank-study",
            Command::MatvecBench => "matvec-bench",
            Command::SolveIe => "solve-ie",
            Command::ParallelBench => "parallel-bench",
        }
    }
}

impl FromStr for Command {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .with_context(|| format!("unknown command `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VariantSel {
    One(Variant),
    All,
}

impl VariantSel {
    pub fn variants(&self) -> Vec<Variant> {
        match self {
            VariantSel::One(v) => vec![*v],
            VariantSel::All => Variant::ALL.to_vec(),
        }
    }
}

impl fmt::Display for VariantSel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VariantSel::One(v) => f.write_str(v.as_str()),
            VariantSel::All => f.write_str("all"),
        }
    }
}

impl FromStr for VariantSel {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(VariantSel::All);
        }
        Ok(VariantSel::One(s.parse()?))
    }
}

/// A sweep written as `v`, `a,b,c` or `lo:hi` (doubling from `lo`).
pub fn parse_sweep(s: &str) -> Result<Vec<usize>> {
    let out: Vec<usize> = if let Some((lo, hi)) = s.split_once(':') {
        let lo: usize = lo.trim().parse().with_context(|| format!("bad sweep start in `{s}`"))?;
        let hi: usize = hi.trim().parse().with_context(|| format!("bad sweep end in `{s}`"))?;
        if lo > hi {
            bail!("sweep `{s}` is empty");
        }
        if lo == 0 {
            bail!("sweep `{s}` cannot double from 0");
        }
        std::iter::successors(Some(lo), |&n| n.checked_mul(2))
            .take_while(|&n| n <= hi)
            .collect()
    } else {
        s.split(',')
            .map(|t| t.trim().parse().with_context(|| format!("bad value `{t}` in `{s}`")))
            .collect::<Result<_>>()?
    };
    if out.is_empty() {
        bail!("empty sweep `{s}`");
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub kernel: String,
    pub variant: VariantSel,
    /// Particle counts, or points per cube for the rank study.
    pub sizes: Vec<usize>,
    pub n_max: usize,
    pub eps: f64,
    pub seed: u64,
    pub n_p: usize,
    pub grid_n: Vec<usize>,
    /// Octree depths for the census.
    pub depths: Vec<usize>,
    pub match_error: Option<f64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Defaults for `command`. The rank study uses `eps = 1e-14`, the others
    /// `1e-7`.
    pub fn new(command: Command) -> Self {
        let (sizes, eps) = match command {
            Command::RankStudy => (vec![64, 128, 256, 512, 1024], 1e-14),
            Command::ParallelBench => (vec![32768], 1e-7),
            _ => (vec![4096, 8192, 16384], 1e-7),
        };
        Self {
            command,
            kernel: "laplace3d".into(),
            variant: VariantSel::All,
            sizes,
            n_max: 216,
            eps,
            seed: 0,
            n_p: 8,
            grid_n: vec![16],
            depths: vec![0, 1, 2, 3],
            match_error: None,
            out: None,
        }
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        Ok(self.kernel.parse()?)
    }

    /// The `#` comment line written above every CSV.
    pub fn header(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "# cmd={} kernel={} variant={} N={} nmax={} eps={:e} seed={} np={} grid_n={} depth={} match_error={} out={}",
            self.command.as_str(),
            self.kernel,
            self.variant,
            list(&self.sizes),
            self.n_max,
            self.eps,
            self.seed,
            self.n_p,
            list(&self.grid_n),
            list(&self.depths),
            self.match_error.map_or("none".to_string(), |e| format!("{e:e}")),
            self.out.as_ref().map_or("stdout".to_string(), |p| p.display().to_string()),
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(columns: &[&'static str]) -> Self {
        Self {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| *c == name)
    }

    /// Value of column `name` in row `row`.
    pub fn get(&self, row: usize, name: &str) -> Option<&str> {
        Some(self.rows.get(row)?.get(self.column(name)?)?.as_str())
    }
}

pub fn write_csv(cfg: &RunConfig, table: &Table, mut out: impl Write) -> Result<()> {
    writeln!(out, "{}", cfg.header())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&table.columns)?;
    for row in &table.rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(cfg: &RunConfig) -> Result<Table> {
    match cfg.command {
        Command::Census => run_census(cfg),
        Command::RankStudy => run_rank_study(cfg),
        Command::MatvecBench => run_matvec_bench(cfg),
        Command::SolveIe => run_solve_ie(cfg),
        Command::ParallelBench => run_parallel_bench(cfg),
    }
}

fn s(v: impl ToString) -> String {
    v.to_string()
}

/// Block counts per variant and depth, enumerated and from the closed
/// forms. Mismatches are flagged, not treated as errors.
pub fn run_census(cfg: &RunConfig) -> Result<Table> {
    let classes = [
        AdmissibilityClass::Vertex,
        AdmissibilityClass::Edge,
        AdmissibilityClass::Face,
        AdmissibilityClass::WellSeparated,
    ];
    let mut columns = vec![
        "variant",
        "L",
        "dense",
        "dense_formula",
        "dense_unordered",
        "lowrank",
        "lowrank_formula",
    ];
    columns.extend([
        "lowrank_vertex",
        "lowrank_vertex_formula",
        "lowrank_edge",
        "lowrank_edge_formula",
        "lowrank_face",
        "lowrank_face_formula",
        "lowrank_ws",
        "lowrank_ws_formula",
        "lowrank_unordered",
        "coverage_ok",
        "formula_mismatch",
    ]);
    let mut t = Table::new(&columns);
    for v in cfg.variant.variants() {
        for &depth in &cfg.depths {
            if depth > 6 {
                bail!("census depth {depth} is above the supported maximum of 6");
            }
            let c = full_census(depth, v);
            let pair = |total: CensusTotal| {
                let k = c.check(total);
                (s(k.enumerated), k.formula.map_or("0".to_string(), |f| f.to_string()))
            };
            let self_blocks: u64 = c
                .counts
                .iter()
                .filter(|k| k.class == AdmissibilityClass::SelfBlock)
                .map(|k| k.count)
                .sum();
            let dense = c.dense_total();
            let lowrank = c.lowrank_total();
            let mut row = vec![s(v.as_str()), s(depth)];
            let (d, df) = pair(CensusTotal::Dense);
            row.extend([d, df, s(self_blocks + (dense - self_blocks) / 2)]);
            let (l, lf) = pair(CensusTotal::LowRankAll);
            row.extend([l, lf]);
            for class in classes {
                let (a, b) = pair(CensusTotal::LowRank(class));
                row.extend([a, b]);
            }
            row.push(s(lowrank / 2));
            row.push(census_coverage(depth, v).map_or(String::new(), s));
            row.push(s(c.checks.iter().any(|k| !k.matches())));
            t.push(row);
        }
    }
    Ok(t)
}

/// Checks `sum |X||Y| = N^2` on a tensor grid with 8 particles per leaf.
fn census_coverage(depth: usize, v: Variant) -> Option<bool> {
    if depth > 4 {
        return None;
    }
    let side = 2usize << depth;
    let pts = generate_points(Distribution::TensorGrid, side * side * side, 0).ok()?;
    let tree = Octree::with_depth(&pts, depth, Domain::default()).ok()?;
    let lists = build_interaction_lists(&tree, v);
    let n = pts.len() as u128;
    Some(lists.coverage(&tree) == n * n)
}

pub fn run_rank_study(cfg: &RunConfig) -> Result<Table> {
    let kernel = cfg.kernel_spec()?;
    let r = rank_sweep(&kernel, &cfg.sizes, cfg.eps, cfg.seed)?;
    let mut t = Table::new(&[
        "kernel",
        "eps",
        "seed",
        "n_per_cube",
        "class",
        "rank",
        "decay_index",
        "slope",
    ]);
    for p in &r.points {
        for class in STUDY_CLASSES {
            let cr = p
                .ranks
                .iter()
                .find(|c| c.class == class)
                .expect("every class is studied");
            t.push(vec![
                s(kernel.name()),
                format!("{:e}", cfg.eps),
                s(cfg.seed),
                s(p.n),
                s(class.as_str()),
                s(cr.rank),
                s(cr.decay_index),
                r.slope(class).map_or(String::new(), s),
            ]);
        }
    }
    Ok(t)
}

/// Rows sampled for the error estimate once `N` exceeds this.
const FULL_DIRECT_LIMIT: usize = 16384;
const SAMPLED_ROWS: usize = 512;

/// Relative error of `y` against direct summation, over all rows for small
/// `N` and over a fixed sample of rows otherwise. Returns the error and the
/// number of rows used.
fn forward_error(
    kernel: &KernelSpec,
    pts: &hodlr3d::PointSet,
    x: &[f64],
    y: &[f64],
    seed: u64,
) -> Result<(f64, usize)> {
    let n = pts.len();
    let rows: Vec<usize> = if n <= FULL_DIRECT_LIMIT {
        (0..n).collect()
    } else {
        let step = n / SAMPLED_ROWS;
        let shift = (seed as usize) % step;
        (0..SAMPLED_ROWS).map(|k| k * step + shift).collect()
    };
    let exact = direct_rows(kernel, pts, x, &rows)?;
    let approx: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
    Ok((relative_error(&approx, &exact), rows.len()))
}

fn test_vector(n: usize, seed: u64) -> Vec<f64> {
    // Coordinates of a second point cloud serve as a reproducible vector.
    generate_points(Distribution::UniformRandom, n.div_ceil(3).max(1), seed ^ 0x5eed)
        .map(|p| p.points().iter().flat_map(|q| [q.x, q.y, q.z]).take(n).collect())
        .unwrap_or_default()
}

struct BenchRun {
    rep: HMatrix,
    init_s: f64,
    dense_s: f64,
    matvec_s: f64,
    total_s: f64,
    error: f64,
    error_rows: usize,
}

fn bench_one(kernel: &KernelSpec, pts: &hodlr3d::PointSet, cfg: &RunConfig, v: Variant, eps: f64) -> Result<BenchRun> {
    let mut opts = HMatrixOptions::new(v).tolerance(eps).n_max(cfg.n_max);
    opts.reuse_transpose = true;
    let t = Instant::now();
    let rep = HMatrix::new(pts, kernel, &opts)?;
    let init_s = t.elapsed().as_secs_f64();
    let x = test_vector(pts.len(), cfg.seed);
    let (y, timing) = rep.matvec_timed(&x)?;
    let (error, error_rows) = forward_error(kernel, pts, &x, &y, cfg.seed)?;
    Ok(BenchRun {
        rep,
        init_s,
        dense_s: timing.dense_formation_s,
        matvec_s: timing.product_s(),
        total_s: timing.total_s,
        error,
        error_rows,
    })
}

const BENCH_COLUMNS: [&str; 19] = [
    "variant",
    "kernel",
    "N",
    "depth",
    "eps",
    "nmax",
    "seed",
    "init_s",
    "dense_formation_s",
    "matvec_s",
    "matvec_total_s",
    "rel_error",
    "error_rows",
    "max_rank",
    "lowrank_blocks",
    "dense_blocks",
    "memory_bytes",
    "compression_ratio",
    "matched",
];

fn bench_row(
    kernel: &KernelSpec,
    cfg: &RunConfig,
    v: Variant,
    n: usize,
    eps: f64,
    b: &BenchRun,
    matched: &str,
) -> Vec<String> {
    let st = b.rep.stats();
    vec![
        s(v.as_str()),
        s(kernel.name()),
        s(n),
        s(b.rep.depth()),
        format!("{eps:e}"),
        s(cfg.n_max),
        s(cfg.seed),
        format!("{:.6}", b.init_s),
        format!("{:.6}", b.dense_s),
        format!("{:.6}", b.matvec_s),
        format!("{:.6}", b.total_s),
        format!("{:.3e}", b.error),
        s(b.error_rows),
        s(st.max_rank),
        s(st.lowrank_blocks),
        s(st.dense_blocks),
        s(st.memory_bytes()),
        format!("{:.6}", st.compression_ratio()),
        s(matched),
    ]
}

/// Decades of `eps` tried in matched-error mode.
pub const MATCH_EPS: [f64; 5] = [1e-6, 1e-7, 1e-8, 1e-9, 1e-10];

/// Timings, storage and forward error per variant and `N`. With
/// `match_error`, each variant's `eps` is picked from [`MATCH_EPS`] so that
/// its forward error is closest to the target, and the `matched` column
/// records whether all variants ended within one order of magnitude.
pub fn run_matvec_bench(cfg: &RunConfig) -> Result<Table> {
    let kernel = cfg.kernel_spec()?;
    let mut t = Table::new(&BENCH_COLUMNS);
    for &n in &cfg.sizes {
        let pts = generate_points(Distribution::UniformRandom, n, cfg.seed)?;
        match cfg.match_error {
            None => {
                for v in cfg.variant.variants() {
                    let b = bench_one(&kernel, &pts, cfg, v, cfg.eps)?;
                    t.push(bench_row(&kernel, cfg, v, n, cfg.eps, &b, ""));
                }
            }
            Some(target) => {
                if target.is_nan() || target <= 0.0 {
                    bail!("matched-error target must be positive, got {target}");
                }
                let mut chosen = Vec::new();
                for v in cfg.variant.variants() {
                    let mut best: Option<(f64, f64, BenchRun)> = None;
                    for eps in MATCH_EPS {
                        let b = bench_one(&kernel, &pts, cfg, v, eps)?;
                        let dist = (b.error.max(f64::MIN_POSITIVE).log10() - target.log10()).abs();
                        if best.as_ref().map_or(true, |(d, _, _)| dist < *d) {
                            best = Some((dist, eps, b));
                        }
                        if best.as_ref().is_some_and(|(_, _, b)| b.error <= target) {
                            break;
                        }
                    }
                    let (_, eps, b) = best.expect("at least one tolerance is tried");
                    chosen.push((v, eps, b));
                }
                let errs: Vec<f64> = chosen.iter().map(|c| c.2.error.max(f64::MIN_POSITIVE)).collect();
                let lo = errs.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = errs.iter().cloned().fold(0.0, f64::max);
                let matched = s(hi <= 10.0 * lo);
                for (v, eps, b) in &chosen {
                    t.push(bench_row(&kernel, cfg, *v, n, *eps, b, &matched));
                }
            }
        }
    }
    Ok(t)
}

pub fn run_solve_ie(cfg: &RunConfig) -> Result<Table> {
    let kernel = cfg.kernel_spec()?;
    let mut t = Table::new(&[
        "variant",
        "grid_n",
        "N",
        "eps",
        "seed",
        "iterations",
        "converged",
        "residual",
        "true_residual",
        "fwd_error",
        "init_s",
        "solve_s",
    ]);
    for &n in &cfg.grid_n {
        for v in cfg.variant.variants() {
            let r = ie_experiment(n, &kernel, cfg.eps, v, cfg.seed)?;
            t.push(vec![
                s(v.as_str()),
                s(n),
                s(r.num_points),
                format!("{:e}", cfg.eps),
                s(cfg.seed),
                s(r.iterations),
                s(r.converged),
                format!("{:.3e}", r.residual),
                format!("{:.3e}", r.true_residual),
                format!("{:.3e}", r.fwd_error),
                format!("{:.6}", r.init_s),
                format!("{:.6}", r.solve_s),
            ]);
        }
    }
    Ok(t)
}

/// Worker counts `1, 2, 4, ...` up to `n_p`, with `n_p` itself appended when
/// it is not a power of two.
pub fn worker_counts(n_p: usize) -> Vec<usize> {
    let mut out: Vec<usize> = std::iter::successors(Some(1usize), |&p| p.checked_mul(2))
        .take_while(|&p| p <= n_p)
        .collect();
    if !n_p.is_power_of_two() {
        out.push(n_p);
    }
    out
}

const PARALLEL_REPEATS: usize = 3;

pub fn run_parallel_bench(cfg: &RunConfig) -> Result<Table> {
    if cfg.n_p == 0 {
        bail!("--np must be at least 1");
    }
    let kernel = cfg.kernel_spec()?;
    let mut t = Table::new(&[
        "variant",
        "N",
        "n_p",
        "matvec_avg_s",
        "matvec_max_s",
        "speedup_vs_np2",
        "comm_floats",
        "rel_error_vs_serial",
        "non_power_of_two",
        "seed",
    ]);
    for &n in &cfg.sizes {
        let pts = generate_points(Distribution::UniformRandom, n, cfg.seed)?;
        for v in cfg.variant.variants() {
            let rep = HMatrix::new(
                &pts,
                &kernel,
                &HMatrixOptions::new(v).tolerance(cfg.eps).n_max(cfg.n_max),
            )?;
            let x = test_vector(n, cfg.seed);
            let serial = rep.matvec(&x)?;
            let mut rows = Vec::new();
            for n_p in worker_counts(cfg.n_p) {
                let mut avg = Vec::new();
                let mut max = Vec::new();
                let mut last = None;
                for _ in 0..PARALLEL_REPEATS {
                    let r = parallel_matvec(&rep, &x, n_p)?;
                    avg.push(r.avg_cpu_s());
                    max.push(r.max_cpu_s());
                    last = Some(r);
                }
                let r = last.expect("at least one repetition");
                rows.push((
                    n_p,
                    median(&mut avg),
                    median(&mut max),
                    r.ledger.total_floats(),
                    relative_error(&r.y, &serial),
                ));
            }
            let base = rows.iter().find(|r| r.0 == 2).map(|r| r.1);
            for (n_p, avg, max, floats, err) in rows {
                t.push(vec![
                    s(v.as_str()),
                    s(n),
                    s(n_p),
                    format!("{avg:.6}"),
                    format!("{max:.6}"),
                    base.map_or(String::new(), |b| format!("{:.3}", b / avg)),
                    s(floats),
                    format!("{err:.3e}"),
                    s(!n_p.is_power_of_two()),
                    s(cfg.seed),
                ]);
            }
        }
    }
    Ok(t)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweeps() {
        assert_eq!(parse_sweep("4096").unwrap(), vec![4096]);
        assert_eq!(parse_sweep("10, 20,30").unwrap(), vec![10, 20, 30]);
        assert_eq!(parse_sweep("1000:8000").unwrap(), vec![1000, 2000, 4000, 8000]);
        assert_eq!(parse_sweep("1000:7999").unwrap(), vec![1000, 2000, 4000]);
        assert!(parse_sweep("8:4").is_err());
        assert!(parse_sweep("0:4").is_err());
        assert!(parse_sweep("abc").is_err());
        assert!(parse_sweep("").is_err());
    }

    #[test]
    fn worker_count_ladder() {
        assert_eq!(worker_counts(1), vec![1]);
        assert_eq!(worker_counts(8), vec![1, 2, 4, 8]);
        assert_eq!(worker_counts(6), vec![1, 2, 4, 6]);
    }

    #[test]
    fn defaults_follow_the_experiment_settings() {
        let cfg = RunConfig::new(Command::MatvecBench);
        assert_eq!(cfg.n_max, 216);
        assert_eq!(cfg.eps, 1e-7);
        assert_eq!(RunConfig::new(Command::RankStudy).eps, 1e-14);
        assert!(cfg.header().starts_with("# cmd=matvec-bench "));
    }

    #[test]
    fn variant_selection() {
        assert_eq!("all".parse::<VariantSel>().unwrap().variants().len(), 3);
        assert_eq!(
            "hstrong".parse::<VariantSel>().unwrap(),
            VariantSel::One(Variant::HStrong)
        );
        assert!("weak".parse::<VariantSel>().is_err());
        assert!("plot".parse::<Command>().is_err());
    }

    #[test]
    fn census_table_shape() {
        let mut cfg = RunConfig::new(Command::Census);
        cfg.depths = vec![1];
        let t = run(&cfg).unwrap();
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.get(0, "variant"), Some("hodlr3d"));
        assert_eq!(t.get(0, "dense_unordered"), Some("32"));
        assert_eq!(t.get(1, "lowrank_unordered"), Some("28"));
    }
}
