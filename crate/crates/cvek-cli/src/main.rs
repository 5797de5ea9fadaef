//! `cvek` — kernel-based nonlinear interaction tests and Monte-Carlo studies.
//!
//! Subcommands:
//! - `test`: run the interaction test on a CSV file.
//! - `simulate`: run Monte-Carlo scenario grids and write CSV reports.
//! - `kernels`: print the kernel grammar, strategy tags, and built-in
//!   ensemble libraries.
//!
//! Exit codes: 0 success, 2 input/config error, 3 numerical/fit error.

mod config;
mod data;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cvek::ensemble::{nn_library, rbf_library};
use cvek::interaction::{build_interaction_kernels, interaction_test, interaction_test_cvek};
use cvek::strategy::{run_strategy_with_options, Strategy, StrategyOptions};

use config::{resolve_method, split_selectors, FileConfig, Method, TestConfigEcho, TestJob};

/// CLI failure carrying the exit-code class.
#[derive(Debug)]
pub enum CliError {
    /// Bad input or configuration → exit 2.
    Input(String),
    /// Numerical or fit failure → exit 3.
    Numeric(String),
}

impl From<cvek::Error> for CliError {
    fn from(e: cvek::Error) -> CliError {
        match e {
            cvek::Error::InvalidInput(_) | cvek::Error::InvalidSpec(_) | cvek::Error::Config(_) => {
                CliError::Input(e.to_string())
            }
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "cvek",
    version,
    about = "Kernel-based tests for nonlinear interactions, with Gaussian-process null models and cross-validated kernel ensembles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the interaction test on a CSV data file
    Test(RunArgs),
    /// Run Monte-Carlo scenarios from a config file
    Simulate(RunArgs),
    /// Print the kernel grammar, strategy tags, and ensemble libraries
    Kernels,
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file (required; flags below override its values)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the RNG base seed (simulate: applied to every scenario)
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for simulation replicates (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory for reports
    #[arg(long)]
    out: Option<PathBuf>,
    /// Strategy tag (see `cvek kernels`)
    #[arg(long)]
    strategy: Option<String>,
    /// Columns of the first feature group (comma-separated names, 0-based
    /// indices, or `prefix*` patterns)
    #[arg(long)]
    group1: Option<String>,
    /// Columns of the second feature group
    #[arg(long)]
    group2: Option<String>,
    /// Response column
    #[arg(long)]
    response: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Test(args) => cmd_test(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Kernels => cmd_kernels(),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numeric(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn required_config(args: &RunArgs, mode: &str) -> Result<FileConfig, CliError> {
    let path = args.config.as_ref().ok_or_else(|| {
        CliError::Input(format!("`{mode}` needs --config <path> (see README for the schema)"))
    })?;
    let config = FileConfig::load(path)?;
    config.check_mode(mode)?;
    Ok(config)
}

fn configure_threads(threads: Option<usize>) -> Result<(), CliError> {
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::Input("--threads must be at least 1".into()));
        }
        // Ignore the error if a global pool already exists (tests call this
        // repeatedly in one process).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    Ok(())
}

fn build_test_job(args: &RunArgs, config: &FileConfig) -> Result<TestJob, CliError> {
    let data = config
        .data
        .clone()
        .ok_or_else(|| CliError::Input("config is missing `data` (CSV path)".into()))?;
    let response = args
        .response
        .clone()
        .or_else(|| config.response.clone())
        .ok_or_else(|| CliError::Input("no response column configured".into()))?;
    let group1 = args
        .group1
        .as_deref()
        .map(split_selectors)
        .or_else(|| config.group1.clone())
        .ok_or_else(|| CliError::Input("no group1 column selection configured".into()))?;
    let group2 = args
        .group2
        .as_deref()
        .map(split_selectors)
        .or_else(|| config.group2.clone())
        .ok_or_else(|| CliError::Input("no group2 column selection configured".into()))?;
    if group1.is_empty() || group2.is_empty() {
        return Err(CliError::Input("feature groups must not be empty".into()));
    }
    let method = resolve_method(config, args.strategy.as_deref())?;
    Ok(TestJob {
        data,
        response,
        group1,
        group2,
        method,
        sigma_hint: config.sigma_hint,
        center: config.center.unwrap_or(true),
        seed: args.seed.or(config.seed).unwrap_or(0),
        out: args
            .out
            .clone()
            .or_else(|| config.out.clone())
            .unwrap_or_else(|| PathBuf::from(".")),
    })
}

fn cmd_test(args: &RunArgs) -> Result<(), CliError> {
    let config = required_config(args, "test")?;
    configure_threads(args.threads.or(config.threads))?;
    let job = build_test_job(args, &config)?;

    let table = data::load_table(&job.data)?;
    let response_idx = data::resolve_single(&table.headers, &job.response)?;
    let group1_idx = data::resolve_selectors(&table.headers, &job.group1)?;
    let group2_idx = data::resolve_selectors(&table.headers, &job.group2)?;
    data::check_disjoint(&table.headers, response_idx, &group1_idx, &group2_idx)?;
    if table.n_rows() < 5 {
        return Err(CliError::Input(format!(
            "need at least 5 data rows, got {}",
            table.n_rows()
        )));
    }
    let y = table.vector(response_idx);
    if y.max() - y.min() == 0.0 {
        return Err(CliError::Input(format!(
            "constant response column `{}`",
            table.headers[response_idx]
        )));
    }
    let x1 = table.matrix(&group1_idx);
    let x2 = table.matrix(&group2_idx);

    let options = StrategyOptions {
        sigma_hint: job.sigma_hint,
        rbf_median_literal: false,
        center: job.center,
    };
    let result = match &job.method {
        Method::Tag(strategy) => run_strategy_with_options(*strategy, &x1, &x2, &y, &options)?,
        Method::Pair(spec1, spec2) => {
            let kernels = build_interaction_kernels(spec1, spec2, &x1, &x2, job.center)?;
            interaction_test(&kernels, &y)?
        }
        Method::Library(specs) => interaction_test_cvek(specs, &x1, &x2, &y)?,
    };

    let echo = TestConfigEcho::from_job(&job);
    let report = report::TestReport::new(&result, table.n_rows(), group1_idx.len(), group2_idx.len(), echo);
    let (json_path, text_path) = report::write_test_report(&job.out, &report)?;
    print!("{}", report.render_text());
    println!("reports: {} {}", json_path.display(), text_path.display());
    Ok(())
}

fn cmd_simulate(args: &RunArgs) -> Result<(), CliError> {
    let config = required_config(args, "simulate")?;
    configure_threads(args.threads.or(config.threads))?;
    if config.scenarios.is_empty() {
        return Err(CliError::Input(
            "config has no [[scenario]] tables to simulate".into(),
        ));
    }
    let out = args
        .out
        .clone()
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("."));

    let mut scenarios = config.scenarios.clone();
    if let Some(seed) = args.seed {
        for scenario in &mut scenarios {
            scenario.seed = seed;
        }
    }
    for (i, scenario) in scenarios.iter().enumerate() {
        scenario
            .validate()
            .map_err(|e| CliError::Input(format!("scenario {}: {e}", scenario_label(scenario, i))))?;
    }

    let mut writers = report::SimWriters::create(&out)?;
    report::write_effective_config(&out, &scenarios)?;
    let stdout = std::io::stdout();
    for (i, scenario) in scenarios.iter().enumerate() {
        let name = scenario_label(scenario, i);
        let sim_report = cvek::simulate::run_scenario(scenario)
            .map_err(|e| CliError::from(e.at_step(&format!("scenario {name}"))))?;
        for cell in &sim_report.cells {
            report::progress_line(&name, cell, &mut stdout.lock());
        }
        writers.append_scenario(&name, &sim_report)?;
    }
    println!(
        "wrote {} and {}",
        writers.summary_path.display(),
        writers.replicates_path.display()
    );
    Ok(())
}

fn scenario_label(scenario: &cvek::simulate::SimScenario, index: usize) -> String {
    scenario
        .name
        .clone()
        .unwrap_or_else(|| format!("scenario-{index}"))
}

fn cmd_kernels() -> Result<(), CliError> {
    println!("kernel spec grammar:");
    println!("  linear");
    println!("  quad");
    println!("  rbf:sigma=<v>");
    println!("  matern:nu=<1/2|3/2|5/2>,sigma=<v>   e.g. matern:nu=3/2,sigma=1");
    println!("  nn:sigma=<v>");
    println!();
    let tags: Vec<&str> = Strategy::ALL.iter().map(|s| s.tag()).collect();
    println!("strategy tags: {}", tags.join(", "));
    println!();
    println!("cvek-rbf library ({} kernels):", rbf_library().len());
    for spec in rbf_library() {
        println!("  {spec}");
    }
    println!("cvek-nn library ({} kernels):", nn_library().len());
    for spec in nn_library() {
        println!("  {spec}");
    }
    Ok(())
}
