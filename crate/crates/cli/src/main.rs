//! `sixsim` — command-line front end: closed-form calculators, experiment
//! orchestration, CSV summaries, and topology dumps.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 invariant violation
//! during a run, 3 I/O error.

use clap::{Args, Parser, Subcommand};
use sixsim_core::analytics::{
    self, execute_plan, group_stats, psuccess_grid, read_csv, summary_csv, thread_budget,
    ExperimentPlan,
};
use sixsim_core::engine::ScenarioConfig;
use sixsim_core::radio::Topology;
use sixsim_core::rng::{Purpose, RngHub};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "sixsim",
    about = "Deterministic 6TiSCH mesh simulator: standard MSF stack and the cross-layer piggyback mode",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form first-attempt reservation success probability, optionally
    /// cross-checked against the Monte-Carlo oracle.
    Psuccess(PsuccessArgs),
    /// Execute an experiment plan (paired mode sweeps) and write CSVs.
    Run(RunArgs),
    /// Group statistics (mean/median/P5/P95, optional CDF) over metric CSVs.
    Summarize(SummarizeArgs),
    /// Dump a generated topology: node positions and link RSSI.
    TopoDump(TopoDumpArgs),
    /// Parse and validate a scenario file.
    ValidateConfig(ValidateArgs),
}

#[derive(Args)]
struct PsuccessArgs {
    /// Free cells at the proposing node: a value or a start:end:step sweep.
    #[arg(long)]
    fa: String,
    /// Free cells at the responding node: a value or a start:end:step sweep.
    #[arg(long)]
    fb: String,
    /// Slotframe size (total cells).
    #[arg(long, default_value_t = 100.0)]
    c: f64,
    /// Number of proposed cells; comma-separated list accepted.
    #[arg(long, default_value = "5")]
    k: String,
    /// Cross-check each cell against the Monte-Carlo oracle with this many
    /// trials.
    #[arg(long, value_name = "TRIALS", num_args = 0..=1, default_missing_value = "1000000")]
    verify: Option<u32>,
    /// Oracle seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment plan file (modes/nodes/periods/seeds plus scenario
    /// overrides).
    #[arg(long, conflicts_with = "scenario")]
    plan: Option<PathBuf>,
    /// Single scenario file to run once.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Output directory (run_<index>/ per run plus summary.csv).
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (SIXSIM_THREADS caps this).
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Input CSV files sharing one schema.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Metric column to summarize.
    #[arg(long)]
    metric: String,
    /// Comma-separated grouping columns.
    #[arg(long, default_value = "mode")]
    group_by: String,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also emit empirical CDF points per group to this .dat file.
    #[arg(long)]
    cdf: Option<PathBuf>,
}

#[derive(Args)]
struct TopoDumpArgs {
    #[arg(long, default_value_t = 50)]
    nodes: u16,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Square side in meters.
    #[arg(long, default_value_t = 1000.0)]
    area: f64,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Scenario file to check.
    #[arg(long)]
    scenario: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Invariant(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Invariant(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Invariant(m) | CliError::Io(m) => m,
        }
    }
}

fn io_err(context: &str, e: std::io::Error) -> CliError {
    CliError::Io(format!("{context}: {e}"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version are success; anything else is a usage error.
            let benign = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if benign { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    let result = match cli.command {
        Command::Psuccess(args) => cmd_psuccess(args),
        Command::Run(args) => cmd_run(args),
        Command::Summarize(args) => cmd_summarize(args),
        Command::TopoDump(args) => cmd_topo_dump(args),
        Command::ValidateConfig(args) => cmd_validate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

/// Parses `value` or `start:end:step` into a sweep.
fn parse_sweep(key: &str, spec: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = |why: &str| CliError::Usage(format!("--{key} {spec}: {why}"));
    match parts.as_slice() {
        [v] => Ok(vec![v
            .parse::<f64>()
            .map_err(|_| bad("expected a number"))?]),
        [start, end, step] => {
            let (start, end, step) = (
                start.parse::<f64>().map_err(|_| bad("bad start"))?,
                end.parse::<f64>().map_err(|_| bad("bad end"))?,
                step.parse::<f64>().map_err(|_| bad("bad step"))?,
            );
            if step <= 0.0 || end < start {
                return Err(bad("need start <= end and step > 0"));
            }
            let mut values = Vec::new();
            let mut v = start;
            while v <= end + 1e-9 {
                values.push(v);
                v += step;
            }
            Ok(values)
        }
        _ => Err(bad("expected VALUE or START:END:STEP")),
    }
}

fn write_or_print(path: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, content).map_err(|e| io_err(&p.display().to_string(), e)),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn cmd_psuccess(args: PsuccessArgs) -> Result<(), CliError> {
    let fa = parse_sweep("fa", &args.fa)?;
    let fb = parse_sweep("fb", &args.fb)?;
    if args.c < 1.0 {
        return Err(CliError::Usage("--c must be >= 1".into()));
    }
    let k: Vec<u32> = args
        .k
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<u32>()
                .ok()
                .filter(|&k| k >= 1)
                .ok_or_else(|| CliError::Usage(format!("--k {}: expected positive integers", args.k)))
        })
        .collect::<Result<_, _>>()?;
    for &f in fa.iter().chain(fb.iter()) {
        if !(0.0..=args.c).contains(&f) {
            return Err(CliError::Usage(format!(
                "free-cell count {f} outside [0, {}]",
                args.c
            )));
        }
    }
    let cells = psuccess_grid(&fa, &fb, args.c, &k, args.verify, args.seed);
    let mut out = String::from(if args.verify.is_some() {
        "fa,fb,c,k,p_success,p_mc,abs_err\n"
    } else {
        "fa,fb,c,k,p_success\n"
    });
    for cell in &cells {
        match cell.monte_carlo {
            Some(mc) => out.push_str(&format!(
                "{},{},{},{},{:.6},{:.6},{:.6}\n",
                cell.f_a,
                cell.f_b,
                cell.c,
                cell.k,
                cell.analytic,
                mc,
                (cell.analytic - mc).abs()
            )),
            None => out.push_str(&format!(
                "{},{},{},{},{:.6}\n",
                cell.f_a, cell.f_b, cell.c, cell.k, cell.analytic
            )),
        }
    }
    write_or_print(&args.out, &out)
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let configs = if let Some(plan_path) = &args.plan {
        let text = std::fs::read_to_string(plan_path)
            .map_err(|e| io_err(&plan_path.display().to_string(), e))?;
        let plan = ExperimentPlan::parse(&text).map_err(|e| CliError::Usage(e.to_string()))?;
        plan.expand().map_err(|e| CliError::Usage(e.to_string()))?
    } else if let Some(scenario_path) = &args.scenario {
        let text = std::fs::read_to_string(scenario_path)
            .map_err(|e| io_err(&scenario_path.display().to_string(), e))?;
        vec![ScenarioConfig::from_key_values(&text).map_err(|e| CliError::Usage(e.to_string()))?]
    } else {
        return Err(CliError::Usage("need --plan or --scenario".into()));
    };
    std::fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out.display().to_string(), e))?;
    let threads = args.parallelism.unwrap_or(usize::MAX).min(thread_budget());
    let out_dir = args.out.clone();
    let summaries = execute_plan(configs, threads, move |run| {
        let dir = out_dir.join(format!("run_{:03}", run.config.run_index));
        // I/O failures surface through the summary pass below.
        let _ = std::fs::create_dir_all(&dir);
        let _ = std::fs::write(dir.join("scenario.txt"), run.config.to_key_values());
        let _ = std::fs::write(dir.join("nodes.csv"), run.nodes_csv());
        let _ = std::fs::write(dir.join("packets.csv"), run.packets_csv());
        if !run.violations.is_empty() {
            let _ = std::fs::write(dir.join("violations.txt"), run.violations.join("\n"));
        }
    })
    .map_err(|e| CliError::Usage(e.to_string()))?;
    let summary = summary_csv(&summaries);
    std::fs::write(args.out.join("summary.csv"), &summary)
        .map_err(|e| io_err("summary.csv", e))?;
    let total_violations: usize = summaries.iter().map(|s| s.violations).sum();
    println!(
        "{} runs complete, {} joined nodes total, {} invariant violations",
        summaries.len(),
        summaries.iter().map(|s| u64::from(s.joined)).sum::<u64>(),
        total_violations
    );
    if total_violations > 0 {
        let first = summaries.iter().find(|s| s.violations > 0).unwrap();
        return Err(CliError::Invariant(format!(
            "{total_violations} invariant violations; first in run {} (seed {}, {} mode) — see violations.txt",
            first.run_index,
            first.seed,
            first.mode.label()
        )));
    }
    Ok(())
}

fn cmd_summarize(args: SummarizeArgs) -> Result<(), CliError> {
    let mut header: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<String>> = Vec::new();
    for path in &args.input {
        let text =
            std::fs::read_to_string(path).map_err(|e| io_err(&path.display().to_string(), e))?;
        let (h, mut r) = read_csv(&text).map_err(CliError::Usage)?;
        match &header {
            None => header = Some(h),
            Some(expected) if *expected == h => {}
            Some(_) => {
                return Err(CliError::Usage(format!(
                    "{}: header differs from the first input",
                    path.display()
                )))
            }
        }
        rows.append(&mut r);
    }
    let header = header.ok_or_else(|| CliError::Usage("no input files".into()))?;
    let group_by: Vec<String> = args
        .group_by
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    let stats = group_stats(&header, &rows, &group_by, &args.metric).map_err(CliError::Usage)?;
    let mut out = format!("{},count,mean,median,p5,p95\n", group_by.join(","));
    for s in &stats {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.group.join(","),
            s.count,
            fmt_stat(s.mean),
            fmt_stat(s.median),
            fmt_stat(s.p5),
            fmt_stat(s.p95)
        ));
    }
    write_or_print(&args.out, &out)?;
    if let Some(cdf_path) = &args.cdf {
        let mut dat = String::new();
        for s in &stats {
            dat.push_str(&format!("# group: {}\n", s.group.join(",")));
            for (value, fraction) in analytics::ecdf(&s.values) {
                dat.push_str(&format!("{value} {fraction}\n"));
            }
            dat.push('\n');
        }
        std::fs::write(cdf_path, dat).map_err(|e| io_err(&cdf_path.display().to_string(), e))?;
    }
    Ok(())
}

fn fmt_stat(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.4}")
    }
}

fn cmd_topo_dump(args: TopoDumpArgs) -> Result<(), CliError> {
    let mut cfg = ScenarioConfig::default();
    cfg.n_nodes = args.nodes;
    cfg.rng_seed = args.seed;
    cfg.area_m = args.area;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let mut rng = RngHub::new(cfg.rng_seed).stream(0, Purpose::Topology);
    let topo = Topology::generate(cfg.n_nodes, cfg.radio_params(), cfg.rng_seed, &mut rng)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut out = String::from("record,node,peer,x_m,y_m,rssi_dbm\n");
    for i in 0..topo.n() {
        let (x, y) = topo.position(i);
        out.push_str(&format!("position,{i},,{x:.2},{y:.2},\n"));
    }
    for a in 0..topo.n() {
        for b in (a + 1)..topo.n() {
            out.push_str(&format!("link,{a},{b},,,{:.2}\n", topo.base_rssi(a, b)));
        }
    }
    write_or_print(&args.out, &out)
}

fn cmd_validate(args: ValidateArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.scenario)
        .map_err(|e| io_err(&args.scenario.display().to_string(), e))?;
    let cfg = ScenarioConfig::from_key_values(&text).map_err(|e| CliError::Usage(e.to_string()))?;
    println!(
        "ok: {} nodes, {} min, period {} s, mode {}, seed {}",
        cfg.n_nodes,
        cfg.duration_minutes,
        cfg.app_period_seconds,
        cfg.stack_mode.label(),
        cfg.rng_seed
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_parsing() {
        assert_eq!(parse_sweep("fa", "50").unwrap(), vec![50.0]);
        assert_eq!(
            parse_sweep("fa", "0:100:25").unwrap(),
            vec![0.0, 25.0, 50.0, 75.0, 100.0]
        );
        assert!(parse_sweep("fa", "10:0:5").is_err());
        assert!(parse_sweep("fa", "a:b:c").is_err());
    }
}
