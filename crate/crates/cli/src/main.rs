//! `factorgp` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error
//! (unreadable or inconsistent input), 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{info, warn};

use factorgp::config::{plan_from_str, sim_config_from_str};
use factorgp::io::{read_dataset, write_dataset, write_table};
use factorgp::pipeline::report::{emit_covariances, emit_reports, parse_reports, summary_rows};
use factorgp::pipeline::{run_cv, summarize, SeriesOptions, TargetTimepoint};
use factorgp::simulate::simulate_trial;
use factorgp::{Error, ErrorClass, Result};

#[derive(Parser)]
#[command(name = "factorgp", version, about = "Factor-based genomic prediction with time series of secondary traits")]
struct Cli {
    /// Overrides the seed of the simulation config or CV plan.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for cross-validation replicates (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a trial from a key = value config and write it as CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the per-timepoint factor models on all data and print the
    /// dimensions and alignment.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// Timepoint label or 1-based index, or `auto-heading`.
        #[arg(long, default_value = "auto-heading")]
        target_timepoint: TargetTimepoint,
        /// Also write loadings, correlations, trajectories and covariance
        /// tables here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run cross-validation and write the report files.
    Cv {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-read a report directory, print the PA summary and write it again.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn simulate(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = sim_config_from_str(&read_text(config)?)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let (data, truth) = simulate_trial(&cfg)?;
    write_dataset(&data, out)?;
    let labels = data.design.timepoints();
    write_table(
        &out.join("truth_permutations.csv"),
        &["timepoint", "permutation"],
        truth.permutations.iter().enumerate().map(|(l, p)| vec![labels[l].label.clone(), p.to_string()]),
    )?;
    info!("wrote {} genotypes × {} replicates × {} timepoints to {}", cfg.g, cfg.r, cfg.n_timepoints(), out.display());
    Ok(())
}

fn fit(data_dir: &Path, target: TargetTimepoint, out: Option<&Path>) -> Result<()> {
    let data = read_dataset(data_dir)?;
    let opts = SeriesOptions { target, ..SeriesOptions::default() };
    let (series, summary) = summarize(&data, &opts)?;
    println!("m = {} (target {})", summary.m, summary.target);
    println!("timepoint,m_selected,permutation,fallback");
    for p in &summary.permutations {
        println!("{},{},{},{}", p.timepoint, p.m_selected, p.permutation, u8::from(p.fallback));
    }
    if let Some(dir) = out {
        let mut report = factorgp::pipeline::CvReport::empty(Default::default());
        report.summary = Some(summary);
        emit_reports(&report, dir)?;
        emit_covariances(&series, &data, dir)?;
    }
    Ok(())
}

fn cv(data_dir: &Path, plan_path: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut plan = plan_from_str(&read_text(plan_path)?)?;
    if let Some(s) = seed {
        plan.seed = s;
    }
    let data = read_dataset(data_dir)?;
    let mut report = run_cv(&data, &plan)?;
    match summarize(&data, &SeriesOptions::default()) {
        Ok((_, s)) => report.summary = Some(s),
        Err(e) => warn!("full-data fit failed, loadings and trajectory tables left empty: {e}"),
    }
    emit_reports(&report, out)?;
    print_summary(&report);
    Ok(())
}

fn print_summary(report: &factorgp::pipeline::CvReport) {
    println!("model,scenario,stage,n,n_missing,mean,min,q1,median,q3,max");
    for row in summary_rows(report) {
        println!("{}", row.join(","));
    }
}

fn report(input: &Path, out: &Path) -> Result<()> {
    let report = parse_reports(input)?;
    emit_reports(&report, out)?;
    print_summary(&report);
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new().filter_level(cli.log_level).format_timestamp(None).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            warn!("thread pool already initialised: {e}");
        }
    }
    let result = match cli.command {
        Command::Simulate { config, out } => simulate(&config, &out, cli.seed),
        Command::Fit { data, target_timepoint, out } => fit(&data, target_timepoint, out.as_deref()),
        Command::Cv { data, plan, out } => cv(&data, &plan, &out, cli.seed),
        Command::Report { input, out } => report(&input, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
