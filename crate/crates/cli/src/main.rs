use std::fs::File;
use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use hodlr3d_cli::{parse_sweep, run, write_csv, Command, RunConfig, VariantSel, WORKERS_ENV};

const USAGE_ERROR: u8 = 2;
const RUNTIME_ERROR: u8 = 3;

/// Hierarchical kernel-matrix experiments. Results are written as CSV.
#[derive(Parser, Debug)]
#[command(name = "hodlr3d", version)]
struct Cli {
    /// census | rank-study | matvec-bench | solve-ie | parallel-bench
    #[arg(long)]
    cmd: String,
    /// laplace3d | r4 | helmholtz-re
    #[arg(long, default_value = "laplace3d")]
    kernel: String,
    /// hodlr3d | hodlr | hstrong | all
    #[arg(long, default_value = "all")]
    variant: String,
    /// Particle counts (points per cube for rank-study): `n`, `a,b,c` or
    /// `lo:hi` doubling from `lo`.
    #[arg(long = "N")]
    n: Option<String>,
    /// Leaf capacity.
    #[arg(long, default_value_t = 216)]
    nmax: usize,
    /// ACA tolerance; 1e-14 for rank-study, 1e-7 otherwise.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest worker count for parallel-bench. Overridden by
    /// HODLR3D_NUM_WORKERS.
    #[arg(long, default_value_t = 8)]
    np: usize,
    /// Collocation grid sizes per side for solve-ie.
    #[arg(long = "grid-n", default_value = "16")]
    grid_n: String,
    /// Octree depths for census.
    #[arg(long, default_value = "0:3")]
    depth: String,
    /// Target forward error for matvec-bench; picks eps per variant.
    #[arg(long = "match-error")]
    match_error: Option<f64>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn depths(s: &str) -> anyhow::Result<Vec<usize>> {
    // Depth sweeps are consecutive, unlike size sweeps.
    if let Some((lo, hi)) = s.split_once(':') {
        let lo: usize = lo.trim().parse()?;
        let hi: usize = hi.trim().parse()?;
        anyhow::ensure!(lo <= hi, "depth range `{s}` is empty");
        return Ok((lo..=hi).collect());
    }
    parse_sweep(s)
}

fn config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let command: Command = cli.cmd.parse()?;
    let mut cfg = RunConfig::new(command);
    cfg.kernel = cli.kernel.clone();
    cfg.kernel_spec()?;
    cfg.variant = cli.variant.parse::<VariantSel>()?;
    if let Some(n) = &cli.n {
        cfg.sizes = parse_sweep(n)?;
    }
    cfg.n_max = cli.nmax;
    if let Some(eps) = cli.eps {
        anyhow::ensure!(eps > 0.0, "--eps must be positive");
        cfg.eps = eps;
    }
    cfg.seed = cli.seed;
    cfg.n_p = match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .parse()
            .map_err(|_| anyhow::anyhow!("{WORKERS_ENV} must be a positive integer, got `{v}`"))?,
        Err(_) => cli.np,
    };
    anyhow::ensure!(cfg.n_p >= 1, "worker count must be at least 1");
    cfg.grid_n = parse_sweep(&cli.grid_n)?;
    cfg.depths = depths(&cli.depth)?;
    cfg.match_error = cli.match_error;
    cfg.out = cli.out.clone();
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let cfg = match config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}\n\nRun `hodlr3d --help` for usage.");
            return ExitCode::from(USAGE_ERROR);
        }
    };
    let result = run(&cfg).and_then(|table| match &cfg.out {
        Some(path) => {
            let f = File::create(path).map_err(|e| anyhow::anyhow!("cannot create {}: {e}", path.display()))?;
            write_csv(&cfg, &table, BufWriter::new(f))
        }
        None => write_csv(&cfg, &table, io::stdout().lock()),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(RUNTIME_ERROR)
        }
    }
}
