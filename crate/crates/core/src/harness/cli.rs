//! Command-line entry point.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use super::config::ExperimentConfig;
use super::emit;
use super::experiment::{closed_loop_setup, fit_table, prediction_table};
use super::ingest::{ingest_csv, SeriesKind, ZoneTable};
use super::manifest::RunManifest;
use super::verify::run_checks;
use super::HarnessError;
use crate::mpc::closed_loop::benchmark_scenarios;
use crate::mpc::closed_loop::run_closed_loop;
use crate::mpc::Scenario;
use crate::occupancy::{ukf_estimate, Co2Series};

/// Environment variable holding the log filter.
pub const LOG_ENV: &str = "LFM_LOG";

#[derive(Debug, Parser)]
#[command(name = "lfmpc", version, about = "Latent force model occupancy prediction and building MPC")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Options,
}

#[derive(Debug, Clone, Args)]
pub struct Options {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Scenario tag; repeat for several.
    #[arg(long, global = true)]
    pub scenario: Vec<String>,
    #[arg(long = "span-days", global = true)]
    pub span_days: Option<usize>,
    /// Reject unknown configuration keys.
    #[arg(long, global = true)]
    pub strict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Fit weekday hyperparameters from occupancy data.
    Fit,
    /// Estimate occupancy from CO₂ data.
    Estimate,
    /// Score the bank predictor against persistence.
    Predict,
    /// Run one closed-loop scenario.
    Simulate,
    /// Run every configured scenario and tabulate the comparison.
    Benchmark,
    /// Run the oracle and invariant checks.
    Verify,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Estimate => "estimate",
            Command::Predict => "predict",
            Command::Simulate => "simulate",
            Command::Benchmark => "benchmark",
            Command::Verify => "verify",
        }
    }
}

/// Parses `argv`, runs the subcommand and returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Config with command-line overrides applied, plus the raw config bytes.
pub fn load_config(opts: &Options) -> Result<(ExperimentConfig, Vec<u8>), HarnessError> {
    let (mut cfg, bytes, base) = match &opts.config {
        Some(path) => {
            let bytes = std::fs::read(path)
                .map_err(|e| HarnessError::Config(format!("cannot read `{}`: {e}", path.display())))?;
            let text = String::from_utf8(bytes.clone())
                .map_err(|_| HarnessError::Config(format!("`{}` is not UTF-8", path.display())))?;
            let (cfg, unknown) = ExperimentConfig::from_toml(&text, opts.strict)?;
            for key in unknown {
                warn!("ignoring unknown config key `{key}`");
            }
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (cfg, bytes, base)
        }
        None => (ExperimentConfig::default(), Vec::new(), PathBuf::from(".")),
    };
    cfg.resolve_paths(&base)?;
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    if let Some(o) = &opts.out {
        cfg.output_dir = o.clone();
    }
    if !opts.scenario.is_empty() {
        cfg.scenarios = opts.scenario.clone();
    }
    if let Some(d) = opts.span_days {
        cfg.span_days = d;
    }
    cfg.validate()?;
    Ok((cfg, bytes))
}

fn table(cfg: &ExperimentConfig, path: &Option<PathBuf>, kind: SeriesKind) -> Result<Option<ZoneTable>, HarnessError> {
    path.as_ref().map(|p| ingest_csv(p, kind, &cfg.data)).transpose()
}

pub fn dispatch(cli: &Cli) -> Result<(), HarnessError> {
    let (cfg, bytes) = load_config(&cli.opts)?;
    let dir = cfg.output_dir.clone();
    let seed = cfg.seed;
    info!("{} with seed {seed} into {}", cli.command.name(), dir.display());
    let files = match cli.command {
        Command::Fit => {
            let occ = table(&cfg, &cfg.data.occupancy, SeriesKind::Occupancy)?;
            vec![emit::write_fit(&dir, &fit_table(&cfg, seed, occ.as_ref())?)?]
        }
        Command::Estimate => {
            let co2 = table(&cfg, &cfg.data.co2, SeriesKind::Co2)?
                .ok_or_else(|| HarnessError::Config("data.co2: a CO₂ file is required for `estimate`".into()))?;
            let estimates = co2
                .names
                .iter()
                .zip(&co2.values)
                .map(|(name, values)| {
                    let air_mass = cfg
                        .building
                        .zones
                        .iter()
                        .find(|z| &z.name == name)
                        .map_or(crate::building::ZoneParams::default().air_mass, |z| z.air_mass);
                    let series = Co2Series {
                        start: co2.start,
                        step: co2.step,
                        co2: values.clone(),
                        supply_co2: vec![cfg.building.supply.co2; values.len()],
                        air_flow: vec![cfg.data.air_flow; values.len()],
                        air_mass,
                    };
                    ukf_estimate(&series, &cfg.estimator)
                })
                .collect::<crate::error::Result<Vec<_>>>()?;
            vec![emit::write_occupancy(&dir, &co2, &estimates)?]
        }
        Command::Predict => {
            let occ = table(&cfg, &cfg.data.occupancy, SeriesKind::Occupancy)?;
            let rows = prediction_table(&cfg, seed, occ.as_ref())?;
            for r in &rows {
                info!("{} {}: {:.1}", r.zone, r.predictor, r.summed_rmse);
            }
            vec![emit::write_rmse(&dir, &rows)?]
        }
        Command::Simulate | Command::Benchmark => {
            let occ = table(&cfg, &cfg.data.occupancy, SeriesKind::Occupancy)?;
            let weather = table(&cfg, &cfg.data.weather, SeriesKind::Weather)?;
            let setup = closed_loop_setup(&cfg, seed, occ.as_ref(), weather.as_ref())?;
            let scenarios = cfg.scenario_list()?;
            let names: Vec<String> = cfg.building.zones.iter().map(|z| z.name.clone()).collect();
            let (results, rows) = if cli.command == Command::Simulate {
                let scenario = if cfg.scenarios.is_empty() { Scenario::Exact } else { scenarios[0] };
                if scenarios.len() > 1 {
                    warn!("simulate runs only the first scenario, `{}`", scenario.tag());
                }
                let r = run_closed_loop(&setup, scenario)?;
                let rows = names
                    .iter()
                    .enumerate()
                    .map(|(z, n)| crate::mpc::closed_loop::BenchmarkRow {
                        scenario,
                        zone: n.clone(),
                        discomfort_kh: r.discomfort[z],
                        energy_kwh: r.energy[z],
                        energy_reduction_pct: 0.0,
                    })
                    .collect::<Vec<_>>();
                (vec![r], rows)
            } else {
                benchmark_scenarios(&setup, &scenarios)?
            };
            let mut files = emit::write_summary(&dir, &rows)?;
            for r in &results {
                files.push(emit::write_trajectory(&dir, r, &names)?);
            }
            files
        }
        Command::Verify => {
            let checks = run_checks(seed);
            let mut report = String::from("check,passed,detail\n");
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                report.push_str(&format!("{},{},\"{}\"\n", c.name, c.passed, c.detail));
            }
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("verify.csv"), report)?;
            let failed = checks.iter().filter(|c| !c.passed).count();
            write_manifest(cli.command, &bytes, seed, &dir, &["verify.csv".to_string()])?;
            if failed > 0 {
                return Err(HarnessError::Numeric(format!("{failed} check(s) failed")));
            }
            return Ok(());
        }
    };
    write_manifest(cli.command, &bytes, seed, &dir, &files)
}

fn write_manifest(command: Command, bytes: &[u8], seed: u64, dir: &Path, files: &[String]) -> Result<(), HarnessError> {
    let mut m = RunManifest::new(command.name(), bytes, seed);
    m.inventory(dir, files)?;
    m.write(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_subcommand_is_usage_error() {
        assert_eq!(run(["lfmpc", "frobnicate"]), 1);
    }

    #[test]
    fn missing_config_is_config_error() {
        assert_eq!(run(["lfmpc", "verify", "--config", "/nonexistent/cfg.toml"]), 2);
    }

    #[test]
    fn estimate_without_data_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(run(["lfmpc", "estimate", "--out", dir.path().to_str().unwrap()]), 2);
    }
}
