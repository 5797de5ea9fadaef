//! Config-file schema (TOML) and merging of command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use cvek::kernel::KernelSpec;
use cvek::simulate::SimScenario;
use cvek::strategy::Strategy;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Raw config file contents. Top-level keys configure `test` mode; repeated
/// `[[scenario]]` tables configure `simulate` mode.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    /// Optional mode tag; when present it must match the subcommand.
    pub mode: Option<String>,
    /// CSV data file (test mode).
    pub data: Option<PathBuf>,
    /// Response column selector.
    pub response: Option<String>,
    /// Column selectors for the first feature group.
    pub group1: Option<Vec<String>>,
    /// Column selectors for the second feature group.
    pub group2: Option<Vec<String>>,
    /// Strategy tag (see `cvek kernels`).
    pub strategy: Option<String>,
    /// Explicit ensemble library of kernel specs (alternative to `strategy`).
    pub library: Option<Vec<String>>,
    /// Fixed kernel for group 1 (used together with `kernel2`).
    pub kernel1: Option<String>,
    /// Fixed kernel for group 2 (used together with `kernel1`).
    pub kernel2: Option<String>,
    /// Kernel scale for strategies that need one (the Matérn tags).
    pub sigma_hint: Option<f64>,
    /// Double-center group Gram matrices (default true).
    pub center: Option<bool>,
    /// Base RNG seed.
    pub seed: Option<u64>,
    /// Worker threads for simulation replicates.
    pub threads: Option<usize>,
    /// Output directory for reports.
    pub out: Option<PathBuf>,
    /// Simulation scenarios (simulate mode).
    #[serde(default, rename = "scenario")]
    pub scenarios: Vec<SimScenario>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig, CliError> {
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::Input(format!("cannot read config file {}: {e}", path.display()))
        })?;
        toml::from_str(&text)
            .map_err(|e| CliError::Input(format!("config file {}: {e}", path.display())))
    }

    pub fn check_mode(&self, subcommand: &str) -> Result<(), CliError> {
        if let Some(mode) = &self.mode {
            if mode != subcommand {
                return Err(CliError::Input(format!(
                    "config declares mode `{mode}` but the `{subcommand}` subcommand was invoked"
                )));
            }
        }
        Ok(())
    }
}

/// How the null/derivative kernels are chosen in test mode.
#[derive(Debug, Clone)]
pub enum Method {
    /// A named strategy tag.
    Tag(Strategy),
    /// A fixed kernel per feature group.
    Pair(KernelSpec, KernelSpec),
    /// A custom ensemble library.
    Library(Vec<KernelSpec>),
}

impl Method {
    /// Compact textual form for reports.
    pub fn describe(&self) -> String {
        match self {
            Method::Tag(s) => format!("strategy:{s}"),
            Method::Pair(a, b) => format!("pair:{a}|{b}"),
            Method::Library(specs) => {
                let parts: Vec<String> = specs.iter().map(|s| s.to_string()).collect();
                format!("library:[{}]", parts.join(","))
            }
        }
    }
}

/// A fully resolved test-mode job (config file merged with flag overrides).
#[derive(Debug, Clone)]
pub struct TestJob {
    pub data: PathBuf,
    pub response: String,
    pub group1: Vec<String>,
    pub group2: Vec<String>,
    pub method: Method,
    pub sigma_hint: Option<f64>,
    pub center: bool,
    pub seed: u64,
    pub out: PathBuf,
}

/// Splits a comma-separated flag value into selector tokens.
pub fn split_selectors(raw: &str) -> Vec<String> {
    raw.split(',')
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty())
        .collect()
}

fn parse_spec_list(raw: &[String]) -> Result<Vec<KernelSpec>, CliError> {
    raw.iter()
        .map(|s| s.parse::<KernelSpec>().map_err(CliError::from))
        .collect()
}

/// Resolves the test-mode method from config + flag override. The `strategy`
/// flag (when given) replaces whatever the config chose.
pub fn resolve_method(
    config: &FileConfig,
    strategy_flag: Option<&str>,
) -> Result<Method, CliError> {
    if let Some(tag) = strategy_flag {
        return Ok(Method::Tag(tag.parse::<Strategy>()?));
    }
    let mut chosen: Vec<Method> = Vec::new();
    if let Some(tag) = &config.strategy {
        chosen.push(Method::Tag(tag.parse::<Strategy>()?));
    }
    if let Some(library) = &config.library {
        if library.is_empty() {
            return Err(CliError::Input("`library` must not be empty".into()));
        }
        chosen.push(Method::Library(parse_spec_list(library)?));
    }
    match (&config.kernel1, &config.kernel2) {
        (Some(a), Some(b)) => {
            chosen.push(Method::Pair(a.parse::<KernelSpec>()?, b.parse::<KernelSpec>()?));
        }
        (None, None) => {}
        _ => {
            return Err(CliError::Input(
                "`kernel1` and `kernel2` must be given together".into(),
            ));
        }
    }
    match chosen.len() {
        0 => Err(CliError::Input(
            "no method configured: set `strategy`, `library`, or `kernel1`+`kernel2`".into(),
        )),
        1 => Ok(chosen.pop().expect("length checked")),
        _ => Err(CliError::Input(
            "conflicting methods: set only one of `strategy`, `library`, `kernel1`+`kernel2`"
                .into(),
        )),
    }
}

/// Effective test-mode configuration echoed into every report so a result is
/// reproducible from the report alone.
#[derive(Debug, Clone, Serialize)]
pub struct TestConfigEcho {
    pub mode: &'static str,
    pub data: String,
    pub response: String,
    pub group1: Vec<String>,
    pub group2: Vec<String>,
    pub method: String,
    pub sigma_hint: Option<f64>,
    pub center: bool,
    pub seed: u64,
    pub out: String,
}

impl TestConfigEcho {
    pub fn from_job(job: &TestJob) -> TestConfigEcho {
        TestConfigEcho {
            mode: "test",
            data: job.data.display().to_string(),
            response: job.response.clone(),
            group1: job.group1.clone(),
            group2: job.group2.clone(),
            method: job.method.describe(),
            sigma_hint: job.sigma_hint,
            center: job.center,
            seed: job.seed,
            out: job.out.display().to_string(),
        }
    }
}
