use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

mod commands;
mod config;
mod output;

use commands::*;
use output::{Manifest, Sink};

#[derive(Parser, Debug)]
#[command(name = "shearlab", version, about = "Shear-band localization toolkit")]
struct Cli {
    /// JSON config; flags given on the command line take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output prefix; defaults to the subcommand name in the working directory.
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "SHEARLAB_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Growth rates of the frozen-coefficient modes.
    Spectrum(SpectrumFlags),
    /// The uniform shearing solution over time.
    UniformShear(UniformShearFlags),
    /// Integrate individual cosine modes of the linearized problem.
    Modes(ModesFlags),
    /// Energy certificate and decay check.
    Energy(EnergyFlags),
    /// Shoot the heteroclinic orbit of the planar system.
    Heteroclinic(HeteroclinicFlags),
    /// Reconstruct a self-similar profile and check its endpoints.
    Profile(ProfileFlags),
    /// Assemble and evaluate a localizing solution.
    Localize(LocalizeFlags),
    /// Nonlinear simulation of the shear problem.
    Simulate(SimulateFlags),
    /// Residual of a localizing solution in the adiabatic system.
    Residual(ResidualFlags),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Spectrum(_) => "spectrum",
            Command::UniformShear(_) => "uniform-shear",
            Command::Modes(_) => "modes",
            Command::Energy(_) => "energy",
            Command::Heteroclinic(_) => "heteroclinic",
            Command::Profile(_) => "profile",
            Command::Localize(_) => "localize",
            Command::Simulate(_) => "simulate",
            Command::Residual(_) => "residual",
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numerical(shearlab_core::Error),
    Io(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numerical(shearlab_core::Error::InvalidParameter(_)) => 2,
            CliError::Numerical(shearlab_core::Error::Io(_)) => 1,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }

    fn report(&self) -> Value {
        match self {
            CliError::Usage(m) => json!({ "kind": "usage", "message": m }),
            CliError::Numerical(e) => json!({ "kind": e.kind(), "message": e.to_string() }),
            CliError::Io(m) => json!({ "kind": "io", "message": m }),
        }
    }
}

impl From<shearlab_core::Error> for CliError {
    fn from(e: shearlab_core::Error) -> Self {
        CliError::Numerical(e)
    }
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", e.report());
    ExitCode::from(e.code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            eprint!("{msg}");
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            return fail(&CliError::Usage(first));
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let start = Instant::now();
    let name = cli.command.name();
    let threads = match cli.threads {
        Some(0) => return Err(CliError::Usage("--threads must be >= 1".into())),
        Some(t) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build_global()
                .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
            t
        }
        None => rayon::current_num_threads(),
    };
    let cfg = cli.config.as_deref().map(|p| config::load(p, name)).transpose()?;
    let mut sink = Sink::new(cli.out.clone().unwrap_or_else(|| PathBuf::from(name)))?;
    let outcome = match &cli.command {
        Command::Spectrum(f) => spectrum(f, cfg, &mut sink),
        Command::UniformShear(f) => uniform_shear(f, cfg, &mut sink),
        Command::Modes(f) => modes(f, cfg, &mut sink),
        Command::Energy(f) => energy(f, cfg, &mut sink),
        Command::Heteroclinic(f) => heteroclinic(f, cfg, &mut sink),
        Command::Profile(f) => profile(f, cfg, &mut sink),
        Command::Localize(f) => localize(f, cfg, &mut sink),
        Command::Simulate(f) => simulate(f, cfg, &mut sink),
        Command::Residual(f) => residual(f, cfg, &mut sink),
    }?;
    let manifest_path = sink.path(Some("manifest"), "json");
    let manifest = Manifest {
        subcommand: name,
        params: outcome.params,
        config: cli.config.as_deref(),
        outputs: &sink.written,
        tolerances: outcome.tolerances,
        seeds: outcome.seeds,
        version: output::VERSION,
        threads,
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    output::write_json(&manifest_path, &manifest)?;
    let mut summary = outcome.summary;
    if let Value::Object(m) = &mut summary {
        m.insert("subcommand".into(), json!(name));
        m.insert("outputs".into(), json!(sink.written));
        m.insert("manifest".into(), json!(manifest_path));
    }
    println!("{summary}");
    match outcome.failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
