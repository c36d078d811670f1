//! `mdrlab` — experiment runner and reporting front end.
//!
//! Verbs: `run` (seeded training runs → CSV/checkpoints/manifest),
//! `compare` (mean ± std charts and a final-window summary across runs),
//! `scan` (clip-saturation scan) and `gradcheck` (finite-difference suite).
//! The `MDRLAB_SEED` environment variable overrides the master seed of any
//! verb that consumes one.

use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use mdrlab::config::ExperimentConfig;
use mdrlab::diagnostics;
use mdrlab::experiment::{self, NamedTable, MANIFEST_FILE};
use mdrlab::gradcheck;
use mdrlab::report;

#[derive(Parser)]
#[command(name = "mdrlab", version, about = "PPO train/eval-mismatch laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute seeded training runs and write CSV, checkpoint and manifest artifacts.
    Run(RunArgs),
    /// Aggregate run CSVs into comparison charts and a summary table.
    Compare(CompareArgs),
    /// Clip-saturation scan over a grid of base ratios.
    Scan(ScanArgs),
    /// Verify PPO loss gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Config file of flat `key = value` lines (a run manifest also works).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set mode=bn-mdr (repeatable, applied in order).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (shorthand for --set out=DIR).
    #[arg(long)]
    out: Option<String>,
    /// Master seed list, e.g. 1,2,3 (shorthand for --set seeds=LIST).
    #[arg(long)]
    seeds: Option<String>,
}

#[derive(Args)]
struct CompareArgs {
    /// Run CSV files or glob patterns.
    #[arg(required = true)]
    inputs: Vec<String>,
    /// Directory for compare.svg and summary.txt.
    #[arg(long, default_value = "runs")]
    out: String,
    /// Number of trailing steps in the final-window summary.
    #[arg(long, default_value_t = 5)]
    window: usize,
}

#[derive(Args)]
struct ScanArgs {
    /// Clip range ε.
    #[arg(long, default_value_t = 0.2)]
    eps: f64,
    /// Comma-separated perturbation budgets δr.
    #[arg(long, default_value = "0,0.05,0.1,0.15")]
    levels: String,
    /// Base-ratio grid as lo:hi:count.
    #[arg(long, default_value = "0.5:1.5:101")]
    grid: String,
    /// Directory for scan.csv and scan.svg.
    #[arg(long, default_value = "runs")]
    out: String,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Number of random networks (each checked in both modes).
    #[arg(long, default_value_t = 20)]
    nets: usize,
    /// Master seed for network and data generation.
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Scan(args) => cmd_scan(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    }
}

fn cmd_run(args: RunArgs) -> anyhow::Result<()> {
    let file = match &args.config {
        Some(path) => Some(
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        ),
        None => None,
    };
    let mut sets = args.set.clone();
    if let Some(seeds) = &args.seeds {
        sets.push(format!("seeds = {seeds}"));
    }
    if let Some(out) = &args.out {
        sets.push(format!("out = {out}"));
    }
    let mut cfg = ExperimentConfig::from_sources(file.as_deref(), &sets)?;
    cfg.override_master_seed(std::env::var("MDRLAB_SEED").ok().as_deref())?;
    cfg.validate()?;

    let out = experiment::run_to_disk(&cfg)?;
    println!("manifest: {}", out.dir.join(MANIFEST_FILE).display());
    for path in &out.csv_paths {
        println!("csv: {}", path.display());
    }
    if !out.failures.is_empty() {
        for (seed, message) in &out.failures {
            eprintln!("seed {seed}: {message}");
        }
        bail!("{} of {} runs aborted", out.failures.len(), out.csv_paths.len());
    }
    Ok(())
}

fn expand_inputs(inputs: &[String]) -> anyhow::Result<Vec<PathBuf>> {
    let mut paths = BTreeSet::new();
    for input in inputs {
        if input.contains(['*', '?', '[']) {
            let mut any = false;
            for entry in glob::glob(input).with_context(|| format!("bad pattern '{input}'"))? {
                paths.insert(entry?);
                any = true;
            }
            if !any {
                bail!("pattern '{input}' matched no files");
            }
        } else {
            paths.insert(PathBuf::from(input));
        }
    }
    Ok(paths.into_iter().collect())
}

fn cmd_compare(args: CompareArgs) -> anyhow::Result<()> {
    let mut tables = Vec::new();
    for path in expand_inputs(&args.inputs)? {
        let text =
            fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        // Timing sidecars are declared reproducibility exceptions, not run
        // logs; skip them so `runs/*.csv` stays a usable pattern.
        if text.starts_with(&format!("# {}\n", report::TIMING_SCHEMA)) {
            eprintln!("skipping timing sidecar {}", path.display());
            continue;
        }
        let table = report::parse_run_csv(&text)
            .with_context(|| format!("parsing {}", path.display()))?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        tables.push(NamedTable { stem, table });
    }
    let (svg, summary) = experiment::compare_report(&tables, args.window)?;
    let dir = PathBuf::from(&args.out);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("compare.svg"), svg)?;
    fs::write(dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    println!("chart: {}", dir.join("compare.svg").display());
    Ok(())
}

fn cmd_scan(args: ScanArgs) -> anyhow::Result<()> {
    let levels: Vec<f64> = args
        .levels
        .split(',')
        .map(|p| p.trim().parse::<f64>().with_context(|| format!("bad level '{p}'")))
        .collect::<anyhow::Result<_>>()?;
    let parts: Vec<&str> = args.grid.split(':').collect();
    if parts.len() != 3 {
        bail!("--grid expects lo:hi:count, got '{}'", args.grid);
    }
    let lo: f64 = parts[0].parse().context("bad grid lo")?;
    let hi: f64 = parts[1].parse().context("bad grid hi")?;
    let count: usize = parts[2].parse().context("bad grid count")?;
    let grid = experiment::linspace(lo, hi, count)?;

    let scan = diagnostics::clip_saturation_scan(&grid, &levels, args.eps)?;
    let dir = PathBuf::from(&args.out);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("scan.csv"), experiment::scan_csv(&scan))?;
    fs::write(dir.join("scan.svg"), experiment::scan_svg(&scan))?;
    for (i, &level) in scan.levels.iter().enumerate() {
        let cell = &scan.cells[i * scan.r_grid.len()];
        println!(
            "dr = {level}: effective interval [{}, {}]",
            cell.effective_lo, cell.effective_hi
        );
    }
    println!("csv: {}", dir.join("scan.csv").display());
    println!("chart: {}", dir.join("scan.svg").display());
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> anyhow::Result<()> {
    let seed = match std::env::var("MDRLAB_SEED") {
        Ok(v) => v
            .parse()
            .with_context(|| format!("MDRLAB_SEED must be an integer, got '{v}'"))?,
        Err(_) => args.seed,
    };
    let report = gradcheck::run_suite(args.nets, seed)?;
    print!("{}", report.render());
    if !report.passed {
        bail!("gradient check failed");
    }
    Ok(())
}
