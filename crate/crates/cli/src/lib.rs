//! Subcommands of the `bicomp` binary.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 divergence.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use bicomp_core::engine::{
    multi_seed, power_of_two_grid, read_metrics_csv, sweep, Experiment, ParamSpec, RunConfig,
    RunStatus,
};
use bicomp_core::theory::TheoryReport;
use bicomp_core::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "bicomp",
    version,
    about = "Simulate bidirectionally compressed distributed optimization"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one configuration and write its metrics CSV.
    Run(RunArgs),
    /// Run a configuration over a grid of stepsizes {2^i}.
    Sweep(SweepArgs),
    /// Print theory stepsizes, horizons and constant checks as JSON.
    Constants(ConstantsArgs),
    /// Merge metrics files into one long-format CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Override the run seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Metrics CSV destination.
    #[arg(long, default_value = "metrics.csv")]
    pub out: PathBuf,
    /// Also write the JSON summary here (it is always printed to stdout).
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Count every broadcast once per worker.
    #[arg(long)]
    pub downlink_times_n: bool,
    /// Write mean/stderr across `seeds_for_averaging` to this JSON file.
    #[arg(long)]
    pub aggregate: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Smallest exponent i of 2^i.
    #[arg(long, default_value_t = -10, allow_hyphen_values = true)]
    pub lo: i32,
    /// Largest exponent i of 2^i.
    #[arg(long, default_value_t = 10, allow_hyphen_values = true)]
    pub hi: i32,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConstantsArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Abscissa {
    Round,
    /// `uplink_cum + downlink_cum`
    #[value(alias = "total_coords")]
    TotalCoords,
    Downlink,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "round")]
    pub x: Abscissa,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn dispatch(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Constants(a) => cmd_constants(&a),
        Command::Report(a) => cmd_report(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Diverged { .. } => EXIT_DIVERGED,
                _ => EXIT_CONFIG,
            }
        }
    }
}

fn load(path: &Path) -> Result<RunConfig> {
    RunConfig::from_path(path)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

pub fn cmd_run(args: &RunArgs) -> Result<i32> {
    let mut cfg = load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.downlink_times_n |= args.downlink_times_n;
    let exp = Experiment::from_config(&cfg)?;
    let pool = bicomp_core::engine::pool_from_env()?;
    let out = exp.run(Some(&pool))?;
    fs::write(&args.out, out.csv())?;
    let summary = serde_json::to_string_pretty(&out.summary)?;
    if let Some(path) = &args.summary {
        fs::write(path, format!("{summary}\n"))?;
    }
    println!("{summary}");
    if let (Some(path), Some(seeds)) = (&args.aggregate, &cfg.seeds_for_averaging) {
        let report = multi_seed(&exp, seeds, Some(&pool))?;
        fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(match out.summary.status {
        RunStatus::Diverged { round, reason } => {
            eprintln!("diverged at round {round}: {reason}");
            EXIT_DIVERGED
        }
        _ => EXIT_OK,
    })
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<i32> {
    if args.lo > args.hi {
        return Err(Error::config("grid", "--lo exceeds --hi"));
    }
    let mut cfg = load(&args.config)?;
    // the grid replaces any configured stepsize
    cfg.algorithm.gamma = ParamSpec::Value(1.0);
    cfg.algorithm.gamma_multiplier = 1.0;
    let exp = Experiment::from_config(&cfg)?;
    let report = sweep(&exp, &power_of_two_grid(args.lo, args.hi))?;
    if let Some(path) = &args.out {
        fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    print_json(&report)?;
    Ok(EXIT_OK)
}

pub fn cmd_constants(args: &ConstantsArgs) -> Result<i32> {
    let mut cfg = load(&args.config)?;
    // the report lists every stepsize; the run's own choice is irrelevant here
    cfg.algorithm.gamma = ParamSpec::Value(1.0);
    cfg.algorithm.gamma_multiplier = 1.0;
    if cfg.rounds.is_none() && cfg.stop.is_none() {
        cfg.rounds = Some(bicomp_core::engine::RoundsSpec::Count(1));
    }
    let exp = Experiment::from_config(&cfg)?;
    let inputs = exp
        .theory_inputs
        .clone()
        .ok_or_else(|| Error::Theory("no theory inputs".into()))?;
    let mean_at_opt = exp.oracle.reference().map(|r| r.mean_grad_norm_sq());
    let report = TheoryReport::compute(&inputs, Some(exp.oracle.constants()), mean_at_opt)?;
    print_json(&report)?;
    Ok(EXIT_OK)
}

/// One row of the merged plotting table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run_label: String,
    pub x: u64,
    pub f: f64,
    pub grad_norm_sq: f64,
}

pub const REPORT_HEADER: &str = "run_label,x,f,grad_norm_sq";

pub fn merge_reports(inputs: &[(String, String)], x: Abscissa) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for (label, text) in inputs {
        for m in
            read_metrics_csv(text).map_err(|e| Error::config("inputs", format!("{label}: {e}")))?
        {
            let xv = match x {
                Abscissa::Round => m.round as u64,
                Abscissa::TotalCoords => m.uplink_cum + m.downlink_cum,
                Abscissa::Downlink => m.downlink_cum,
            };
            rows.push(ReportRow {
                run_label: label.clone(),
                x: xv,
                f: m.f,
                grad_norm_sq: m.grad_norm_sq,
            });
        }
    }
    Ok(rows)
}

pub fn write_report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{:?},{:?}\n",
            r.run_label, r.x, r.f, r.grad_norm_sq
        ));
    }
    out
}

pub fn read_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(REPORT_HEADER) {
        return Err(Error::config("report", "unexpected header"));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            // labels may contain commas; the numeric fields never do
            let mut parts = l.rsplitn(4, ',');
            let g = parts.next();
            let f = parts.next();
            let x = parts.next();
            let label = parts.next();
            match (label, x, f, g) {
                (Some(label), Some(x), Some(f), Some(g)) => Ok(ReportRow {
                    run_label: label.to_string(),
                    x: x.parse()
                        .map_err(|_| Error::config("report", format!("bad x in {l:?}")))?,
                    f: f.parse()
                        .map_err(|_| Error::config("report", format!("bad f in {l:?}")))?,
                    grad_norm_sq: g.parse().map_err(|_| {
                        Error::config("report", format!("bad grad_norm_sq in {l:?}"))
                    })?,
                }),
                _ => Err(Error::config("report", format!("bad row {l:?}"))),
            }
        })
        .collect()
}

pub fn cmd_report(args: &ReportArgs) -> Result<i32> {
    let inputs = args
        .inputs
        .iter()
        .map(|p| {
            let label = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string());
            Ok((label, fs::read_to_string(p)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = merge_reports(&inputs, args.x)?;
    fs::write(&args.out, write_report_csv(&rows))?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_round_trip() {
        let rows = vec![
            ReportRow {
                run_label: "a,b".into(),
                x: 3,
                f: 0.1 + 0.2,
                grad_norm_sq: 1e-300,
            },
            ReportRow {
                run_label: "plain".into(),
                x: 0,
                f: -1.5,
                grad_norm_sq: 0.0,
            },
        ];
        assert_eq!(read_report_csv(&write_report_csv(&rows)).unwrap(), rows);
    }

    #[test]
    fn cli_parses() {
        let cli = Cli::try_parse_from([
            "bicomp", "sweep", "--config", "c.json", "--lo", "-3", "--hi", "2",
        ])
        .unwrap();
        match cli.command {
            Command::Sweep(a) => assert_eq!((a.lo, a.hi), (-3, 2)),
            _ => panic!("wrong subcommand"),
        }
        assert!(Cli::try_parse_from(["bicomp", "report", "--out", "x.csv"]).is_err());
        let cli = Cli::try_parse_from([
            "bicomp",
            "report",
            "--inputs",
            "a.csv",
            "--x",
            "total_coords",
            "--out",
            "o.csv",
        ])
        .unwrap();
        match cli.command {
            Command::Report(a) => assert_eq!(a.x, Abscissa::TotalCoords),
            _ => panic!("wrong subcommand"),
        }
    }
}
