//! `beamsim`: SER sweeps, sum rate, imperfect-CSI runs and self-checks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use beamsim_core::check::run_checks;
use beamsim_core::sim::{
    imperfect_csi_sweep, qam_reference_sweep, run_sweep, validate_csi_sweep, CsvLayout,
    SweepResult,
};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use config::{ConfigFile, Overrides, Preset};
use manifest::{finish, now, write_output, RunManifest};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("output error: {0}")]
    Output(String),
    #[error("{0} check(s) failed")]
    ChecksFailed(usize),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::ChecksFailed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Output(_) => 3,
        }
    }
}

impl From<beamsim_core::Error> for CliError {
    fn from(e: beamsim_core::Error) -> Self {
        use beamsim_core::Error as E;
        match e {
            E::InvalidScenario(_)
            | E::InvalidOrder(_)
            | E::InvalidConstellation(_)
            | E::NegativeVariance(_)
            | E::NonSquareQam(_)
            | E::InvalidNoise(_) => CliError::Config(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "beamsim", version, about = "Receive beamforming SER experiments for PAM uplinks")]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, env = "BEAMSIM_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// SER, analytic Pe and upper bound versus SNR.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// CSI error variance used to design the beamformers.
        #[arg(long)]
        csi_var: Option<f64>,
    },
    /// Sum rate of the PAM methods plus the square-QAM reference.
    Rate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// QAM order of the reference (a perfect square).
        #[arg(long)]
        qam_order: Option<usize>,
        /// Number of QAM users in the reference.
        #[arg(long)]
        qam_users: Option<usize>,
    },
    /// SER under imperfect CSI for several error variances.
    Csi {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Comma-separated CSI error variances.
        #[arg(long, value_delimiter = ',')]
        variances: Option<Vec<f64>>,
    },
    /// Runs the property suites and prints a pass/fail table.
    Check {
        /// Small instance counts (well under a minute).
        #[arg(long)]
        quick: bool,
        /// Also write check.json to this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// Figure preset supplying defaults.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// TOML scenario file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Receive antennas.
    #[arg(long)]
    antennas: Option<usize>,
    /// Users, e.g. "4x8pam" or "2x8pam,4pam".
    #[arg(long)]
    users: Option<String>,
    /// SNR grid in dB: "start:step:stop", "a,b,c" or a single value.
    #[arg(long)]
    snr: Option<String>,
    /// Channel realizations.
    #[arg(long)]
    realizations: Option<usize>,
    /// Symbols per realization block.
    #[arg(long)]
    symbols: Option<usize>,
    /// Comma-separated methods: zf, mmse, mpe, rc-mpe, sminr-amp, sminr.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    seed: Option<u64>,
    /// 10^4 realizations of 10^3 symbols unless counts are given explicitly.
    #[arg(long)]
    paper_scale: bool,
    /// Output directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

impl ScenarioArgs {
    fn overrides(&self, csi_var: Option<f64>) -> Overrides {
        Overrides {
            preset: self.preset,
            antennas: self.antennas,
            users: self.users.clone(),
            snr: self.snr.clone(),
            realizations: self.realizations,
            symbols: self.symbols,
            methods: self.methods.clone(),
            seed: self.seed,
            csi_var,
            paper_scale: self.paper_scale,
        }
    }

    fn file(&self) -> Result<ConfigFile, CliError> {
        match &self.config {
            Some(p) => ConfigFile::load(p),
            None => Ok(ConfigFile::default()),
        }
    }
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Output(format!("cannot create {}: {e}", dir.display())))
}

fn write_result(
    dir: &Path,
    stem: &str,
    result: &SweepResult,
    layout: CsvLayout,
    manifest: &mut RunManifest,
) -> Result<(), CliError> {
    write_output(dir, &format!("{stem}.csv"), &result.to_csv(layout), manifest)?;
    let mut json = result.to_json()?;
    json.push('\n');
    write_output(dir, &format!("{stem}.json"), &json, manifest)
}

fn report(result: &SweepResult) {
    let fallback = result.points.iter().filter(|p| p.infeasible_frac > 0.0).count();
    let nonoptimal = result.points.iter().filter(|p| p.nonoptimal_frac > 0.0).count();
    eprintln!("{} points", result.points.len());
    if fallback > 0 {
        eprintln!("warning: {fallback} points include MMSE fallbacks for infeasible designs");
    }
    if nonoptimal > 0 {
        eprintln!("warning: {nonoptimal} points include solves that hit the iteration cap");
    }
}

fn cmd_sweep(args: &ScenarioArgs, csi_var: Option<f64>) -> Result<(), CliError> {
    let started = now();
    let file = args.file()?;
    let sc = config::resolve(Preset::Fig1, &file, &args.overrides(csi_var))?;
    prepare_dir(&args.out)?;
    let mut m = RunManifest::new("sweep", json!({ "scenario": sc }), sc.seed, started);
    let result = run_sweep(&sc)?;
    report(&result);
    write_result(&args.out, "sweep", &result, CsvLayout::Sweep, &mut m)?;
    finish(&args.out, m)
}

fn cmd_rate(
    args: &ScenarioArgs,
    order: Option<usize>,
    users: Option<usize>,
) -> Result<(), CliError> {
    let started = now();
    let file = args.file()?;
    let sc = config::resolve(Preset::Fig4, &file, &args.overrides(None))?;
    let qam = config::resolve_qam(&sc, &file, order, users)?;
    prepare_dir(&args.out)?;
    let mut m = RunManifest::new(
        "rate",
        json!({ "scenario": sc, "qam_reference": qam }),
        sc.seed,
        started,
    );
    let mut result = run_sweep(&sc)?;
    result.extend(qam_reference_sweep(&qam)?);
    report(&result);
    write_result(&args.out, "rate", &result, CsvLayout::Rate, &mut m)?;
    finish(&args.out, m)
}

fn cmd_csi(args: &ScenarioArgs, variances: Option<Vec<f64>>) -> Result<(), CliError> {
    let started = now();
    let file = args.file()?;
    let sc = config::resolve(Preset::Fig5, &file, &args.overrides(None))?;
    let variances = config::resolve_variances(&file, variances)?;
    validate_csi_sweep(&sc, &variances)?;
    prepare_dir(&args.out)?;
    let mut m = RunManifest::new(
        "csi",
        json!({ "scenario": sc, "variances": variances }),
        sc.seed,
        started,
    );
    let result = imperfect_csi_sweep(&sc, &variances)?;
    report(&result);
    write_result(&args.out, "csi", &result, CsvLayout::Csi, &mut m)?;
    finish(&args.out, m)
}

fn cmd_check(quick: bool, out: Option<&Path>) -> Result<(), CliError> {
    let outcomes = run_checks(quick)?;
    let width = outcomes.iter().map(|o| o.name.len()).max().unwrap_or(0);
    for o in &outcomes {
        println!(
            "{:<width$}  {}  {}",
            o.name,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if let Some(dir) = out {
        prepare_dir(dir)?;
        let path = dir.join("check.json");
        let text = serde_json::to_string_pretty(&outcomes)
            .map_err(|e| CliError::Output(e.to_string()))?;
        std::fs::write(&path, text + "\n")
            .map_err(|e| CliError::Output(format!("cannot write {}: {e}", path.display())))?;
    }
    match outcomes.iter().filter(|o| !o.passed).count() {
        0 => Ok(()),
        n => Err(CliError::ChecksFailed(n)),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Sweep { scenario, csi_var } => cmd_sweep(scenario, *csi_var),
        Command::Rate {
            scenario,
            qam_order,
            qam_users,
        } => cmd_rate(scenario, *qam_order, *qam_users),
        Command::Csi {
            scenario,
            variances,
        } => cmd_csi(scenario, variances.clone()),
        Command::Check { quick, out } => cmd_check(*quick, out.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("beamsim: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
