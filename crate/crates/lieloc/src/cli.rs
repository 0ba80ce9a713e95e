//! `lieloc run` and `lieloc metrics`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::config::{circle_template, corner_template, Scenario};
use crate::error::{SimError, SimResult};
use crate::metrics::{compute_metrics, RunMetrics};
use crate::output::{
    format_table, read_metrics, read_trajectories, run_dir, stats_from_rows, trajectory_rows, write_metrics,
    write_plotdata, write_trajectories, TrajectoryRow, METRICS_FILE, TRAJECTORIES_FILE,
};
use crate::runner::{run_scenario_seeded, FilterVariant};

/// Overrides the default output directory `results`.
pub const OUT_DIR_ENV: &str = "LIELOC_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "lieloc", version, about = "Leader/follower localization simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario for each variant and seed.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory [default: $LIELOC_OUT_DIR or ./results]
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated subset of imuOnly, imuVelocity, full, fullNoGate.
        #[arg(long, default_value = "imuOnly,imuVelocity,full,fullNoGate")]
        variants: String,
        /// Seeds such as `1..10` (inclusive), `4` or `1,3,5`; defaults to the scenario seed.
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Summarize an existing run directory.
    Metrics {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write per-figure CSVs under <out>/plotdata.
        #[arg(long)]
        plotdata: bool,
    },
    /// Print a scenario file to start from.
    Template {
        #[arg(long, default_value = "circle")]
        kind: String,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scenario_path: PathBuf,
    pub output_dir: PathBuf,
    pub variants: Vec<FilterVariant>,
    pub seeds: Vec<u64>,
}

pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("results"))
}

pub fn parse_variants(s: &str) -> SimResult<Vec<FilterVariant>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let v: FilterVariant = part.parse()?;
        if !out.contains(&v) {
            out.push(v);
        }
    }
    if out.is_empty() {
        return Err(SimError::config("at least one filter variant is required"));
    }
    Ok(out)
}

/// `a..b` is inclusive; comma-separated items may mix ranges and single seeds.
pub fn parse_seeds(s: &str) -> SimResult<Vec<u64>> {
    let bad = || SimError::config(format!("bad --seeds '{s}'"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            if b < a {
                return Err(bad());
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    out.dedup();
    Ok(out)
}

fn ensure_writable(dir: &Path) -> SimResult<()> {
    fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
    let probe = dir.join(".lieloc-write-test");
    fs::write(&probe, b"").map_err(|e| SimError::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| SimError::io(&probe, e))
}

pub struct RunOutcome {
    pub metrics: Vec<RunMetrics>,
    pub rows: usize,
}

/// Runs every `(variant, seed)` pair in parallel, writes one result set per
/// pair under `runs/` and the merged files at the top of the output directory.
pub fn execute_run(cfg: &RunConfig, scenario: &Scenario) -> SimResult<RunOutcome> {
    ensure_writable(&cfg.output_dir)?;
    let jobs: Vec<(FilterVariant, u64)> =
        cfg.variants.iter().flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s))).collect();
    let results: Vec<SimResult<(RunMetrics, Vec<TrajectoryRow>)>> = jobs
        .par_iter()
        .map(|&(variant, seed)| {
            let log = run_scenario_seeded(scenario, variant, seed)?;
            let metrics = compute_metrics(&log);
            let rows = trajectory_rows(&log);
            let dir = run_dir(&cfg.output_dir, variant, seed);
            fs::create_dir_all(&dir).map_err(|e| SimError::io(&dir, e))?;
            write_trajectories(&dir.join(TRAJECTORIES_FILE), &rows)?;
            write_metrics(&dir.join(METRICS_FILE), std::slice::from_ref(&metrics))?;
            Ok((metrics, rows))
        })
        .collect();
    let mut metrics = Vec::new();
    let mut rows = Vec::new();
    for r in results {
        let (m, mut rs) = r?;
        metrics.push(m);
        rows.append(&mut rs);
    }
    write_trajectories(&cfg.output_dir.join(TRAJECTORIES_FILE), &rows)?;
    write_metrics(&cfg.output_dir.join(METRICS_FILE), &metrics)?;
    Ok(RunOutcome { metrics, rows: rows.len() })
}

fn cmd_run(scenario: PathBuf, out: Option<PathBuf>, variants: &str, seeds: Option<&str>) -> SimResult<()> {
    let sc = Scenario::from_file(&scenario)?;
    let cfg = RunConfig {
        scenario_path: scenario,
        output_dir: out.unwrap_or_else(default_out_dir),
        variants: parse_variants(variants)?,
        seeds: match seeds {
            Some(s) => parse_seeds(s)?,
            None => vec![sc.seed],
        },
    };
    let outcome = execute_run(&cfg, &sc)?;
    for m in &outcome.metrics {
        let per: Vec<String> =
            m.robots.iter().map(|r| format!("{}={:.4}", r.role.as_str(), r.position_rmse_m)).collect();
        println!("{} seed {}: position RMSE (m) {}", m.variant, m.seed, per.join(" "));
    }
    println!("wrote {} rows to {}", outcome.rows, cfg.output_dir.join(TRAJECTORIES_FILE).display());
    Ok(())
}

fn cmd_metrics(out: Option<PathBuf>, plotdata: bool) -> SimResult<()> {
    let dir = out.unwrap_or_else(default_out_dir);
    let csv = dir.join(TRAJECTORIES_FILE);
    if !csv.is_file() {
        return Err(SimError::config(format!("no run output at {}", csv.display())));
    }
    let rows = read_trajectories(&csv)?;
    print!("{}", format_table(&stats_from_rows(&rows)));
    let mpath = dir.join(METRICS_FILE);
    if mpath.is_file() {
        let m = read_metrics(&mpath)?;
        for run in &m.runs {
            for r in &run.robots {
                if r.gate.accepted + r.gate.rejected > 0 {
                    println!(
                        "gate {} seed {} {}: accepted {} rejected {} faulted {} (rejected {})",
                        run.variant,
                        run.seed,
                        r.role.as_str(),
                        r.gate.accepted,
                        r.gate.rejected,
                        r.gate.faulted,
                        r.gate.faulted_rejected
                    );
                }
            }
        }
    }
    if plotdata {
        for p in write_plotdata(&dir.join("plotdata"), &rows)? {
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn cmd_template(kind: &str) -> SimResult<()> {
    let sc = match kind {
        "circle" => circle_template(),
        "corner" => corner_template(),
        other => return Err(SimError::config(format!("unknown template '{other}' (circle or corner)"))),
    };
    print!("{}", sc.to_toml_string()?);
    Ok(())
}

pub fn dispatch(cli: Cli) -> SimResult<()> {
    match cli.command {
        Command::Run { scenario, out, variants, seeds } => cmd_run(scenario, out, &variants, seeds.as_deref()),
        Command::Metrics { out, plotdata } => cmd_metrics(out, plotdata),
        Command::Template { kind } => cmd_template(&kind),
    }
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("lieloc: {e}");
            e.exit_code()
        }
    }
}
