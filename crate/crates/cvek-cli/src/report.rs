//! Report writers: test-mode JSON/text reports and simulate-mode CSVs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use cvek::score::TestResult;
use cvek::simulate::{SimCell, SimReport};
use serde::Serialize;

use crate::config::TestConfigEcho;
use crate::CliError;

/// Numeric conventions baked into the pipeline, echoed into reports so any
/// result documents the exact variant that produced it.
pub const CONVENTIONS: &[&str] = &[
    "group Gram matrices are double-centered before testing when center=true",
    "score statistic is the half-scaled quadratic form (tau/2)*r'V^-1*dK*V^-1*r",
    "reference distribution kappa*chi2_nu matches mean and variance using the nuisance-corrected restricted-likelihood information",
    "per-kernel ridge penalties tuned by leave-one-out error over 30 log-spaced points on [1e-5,1e3]*tr(K)/n",
    "ensemble weights minimize combined leave-one-out error on the nonnegative unit sphere",
    "ensemble kernel reconstructed at unit ridge with hat eigenvalues capped at 1-1e-6",
    "REML fits use three restarts and a gradient tolerance of 1e-5 with an explicit tau=0 boundary comparison",
];

fn input_err(context: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{context}: {e}"))
}

/// Machine-readable test report; field order is fixed so identical runs are
/// byte-identical.
#[derive(Debug, Serialize)]
pub struct TestReport {
    pub version: &'static str,
    pub t0: f64,
    pub kappa: f64,
    pub nu: f64,
    pub p_value: f64,
    pub info: f64,
    pub flags: Vec<String>,
    pub n: usize,
    pub p1: usize,
    pub p2: usize,
    pub method: String,
    pub conventions: Vec<&'static str>,
    pub config: TestConfigEcho,
}

impl TestReport {
    pub fn new(
        result: &TestResult,
        n: usize,
        p1: usize,
        p2: usize,
        echo: TestConfigEcho,
    ) -> TestReport {
        TestReport {
            version: env!("CARGO_PKG_VERSION"),
            t0: result.t0,
            kappa: result.kappa,
            nu: result.nu,
            p_value: result.p_value,
            info: result.info,
            flags: result
                .flags
                .labels()
                .iter()
                .map(|s| s.to_string())
                .collect(),
            n,
            p1,
            p2,
            method: echo.method.clone(),
            conventions: CONVENTIONS.to_vec(),
            config: echo,
        }
    }

    /// Human-readable rendering; p-value shown to 4 significant digits.
    pub fn render_text(&self) -> String {
        let flags = if self.flags.is_empty() {
            "(none)".to_string()
        } else {
            self.flags.join(", ")
        };
        format!(
            "interaction test report (v{})\n\
             data:      {} (n={}, p1={}, p2={})\n\
             method:    {}\n\
             t0:        {:.6}\n\
             kappa:     {:.6}\n\
             nu:        {:.6}\n\
             p-value:   {:.3e}\n\
             flags:     {}\n",
            self.version,
            self.config.data,
            self.n,
            self.p1,
            self.p2,
            self.method,
            self.t0,
            self.kappa,
            self.nu,
            self.p_value,
            flags
        )
    }
}

/// Writes both report files into `out` and returns their paths
/// (machine-readable JSON, human-readable text).
pub fn write_test_report(out: &Path, report: &TestReport) -> Result<(PathBuf, PathBuf), CliError> {
    fs::create_dir_all(out).map_err(|e| input_err("cannot create output directory", e))?;
    let json_path = out.join("test_report.json");
    let text_path = out.join("test_report.txt");
    let json =
        serde_json::to_string_pretty(report).map_err(|e| input_err("cannot encode report", e))?;
    fs::write(&json_path, json.as_bytes())
        .map_err(|e| input_err("cannot write machine report", e))?;
    fs::write(&text_path, report.render_text().as_bytes())
        .map_err(|e| input_err("cannot write text report", e))?;
    Ok((json_path, text_path))
}

/// One summary row: the pinned leading columns, then run parameters, then the
/// scenario label.
#[derive(Debug, Serialize)]
struct SummaryRow<'a> {
    strategy: &'a str,
    k_true: &'a str,
    sigma_true: Option<f64>,
    delta: f64,
    rejection_rate: f64,
    se: f64,
    reps: usize,
    failures: usize,
    n: usize,
    noise_sd: f64,
    alpha: f64,
    seed: u64,
    scenario: &'a str,
}

impl<'a> SummaryRow<'a> {
    fn new(cell: &'a SimCell, scenario: &'a str) -> SummaryRow<'a> {
        SummaryRow {
            strategy: cell.strategy.tag(),
            k_true: &cell.k_true,
            sigma_true: cell.sigma_true,
            delta: cell.delta,
            rejection_rate: cell.rejection_rate,
            se: cell.se,
            reps: cell.reps,
            failures: cell.failures,
            n: cell.n,
            noise_sd: cell.noise_sd,
            alpha: cell.alpha,
            seed: cell.seed,
            scenario,
        }
    }
}

#[derive(Debug, Serialize)]
struct ReplicateRow<'a> {
    scenario: &'a str,
    strategy: &'a str,
    delta: f64,
    rep: u64,
    t0: f64,
    kappa: f64,
    nu: f64,
    p_value: f64,
    reject: bool,
    flags: &'a str,
    error: &'a str,
}

/// Append-only CSV writers for simulate mode; rows are flushed after every
/// scenario so interrupted runs leave complete records behind.
pub struct SimWriters {
    summary: csv::Writer<fs::File>,
    replicates: csv::Writer<fs::File>,
    pub summary_path: PathBuf,
    pub replicates_path: PathBuf,
}

impl SimWriters {
    pub fn create(out: &Path) -> Result<SimWriters, CliError> {
        fs::create_dir_all(out).map_err(|e| input_err("cannot create output directory", e))?;
        let summary_path = out.join("summary.csv");
        let replicates_path = out.join("replicates.csv");
        let summary = csv::Writer::from_path(&summary_path)
            .map_err(|e| input_err("cannot create summary CSV", e))?;
        let replicates = csv::Writer::from_path(&replicates_path)
            .map_err(|e| input_err("cannot create per-replicate CSV", e))?;
        Ok(SimWriters {
            summary,
            replicates,
            summary_path,
            replicates_path,
        })
    }

    /// Writes all rows of one completed scenario and flushes both files.
    pub fn append_scenario(&mut self, name: &str, report: &SimReport) -> Result<(), CliError> {
        for cell in &report.cells {
            self.summary
                .serialize(SummaryRow::new(cell, name))
                .map_err(|e| input_err("cannot write summary row", e))?;
        }
        for record in &report.records {
            self.replicates
                .serialize(ReplicateRow {
                    scenario: name,
                    strategy: record.strategy.tag(),
                    delta: record.delta,
                    rep: record.rep,
                    t0: record.t0,
                    kappa: record.kappa,
                    nu: record.nu,
                    p_value: record.p_value,
                    reject: record.reject,
                    flags: &record.flags,
                    error: &record.error,
                })
                .map_err(|e| input_err("cannot write replicate row", e))?;
        }
        self.summary
            .flush()
            .and_then(|_| self.replicates.flush())
            .map_err(|e| input_err("cannot flush CSV output", e))?;
        Ok(())
    }
}

/// Writes the effective simulate config next to the CSVs for
/// reproducibility.
pub fn write_effective_config<T: Serialize>(out: &Path, config: &T) -> Result<PathBuf, CliError> {
    let path = out.join("effective_config.json");
    let json = serde_json::to_string_pretty(config)
        .map_err(|e| input_err("cannot encode effective config", e))?;
    fs::write(&path, json.as_bytes())
        .map_err(|e| input_err("cannot write effective config", e))?;
    Ok(path)
}

/// Convenience used by tests and main: serialize any report to stdout-ready
/// text.
pub fn progress_line(name: &str, cell: &SimCell, out: &mut impl Write) {
    let _ = writeln!(
        out,
        "[{name}] strategy={} delta={} rate={:.4} se={:.4} reps={} failures={}",
        cell.strategy.tag(),
        cell.delta,
        cell.rejection_rate,
        cell.se,
        cell.reps,
        cell.failures
    );
}
