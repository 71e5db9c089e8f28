//! Command-line driver.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigFile, Layer, RegularizationSection, RunSection};
use crate::error::Error;
use crate::oco::FeedbackRegime;
use crate::output::{format_summary, rounds_table, summary_table, trajectories_table};
use crate::sim::{fleet_table, run_experiment, Scenario, ScenarioConfig};

/// Environment variable overriding the output directory of the config file.
pub const OUT_DIR_ENV: &str = "SETPOINT_OCO_OUT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

pub const MANIFEST: &str = "manifest.toml";
pub const ROUNDS: &str = "rounds.csv";
pub const SUMMARY: &str = "summary.csv";
pub const TRAJECTORIES: &str = "trajectories.csv";

#[derive(Debug, Parser)]
#[command(
    name = "setpoint-oco",
    version,
    about = "Demand-response setpoint tracking experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every experiment of a config file and write CSV results.
    Run(RunArgs),
    /// Print the sampled fleet of one trial as a parameter table.
    Fleet(FleetArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub trials: Option<usize>,
    #[arg(long)]
    pub scenario: Option<Scenario>,
    #[arg(long)]
    pub feedback: Option<FeedbackRegime>,
    #[arg(long, value_name = "T")]
    pub rounds: Option<usize>,
    #[arg(long, value_name = "R")]
    pub rho: Option<f64>,
    #[arg(long, value_name = "L")]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct FleetArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Experiment index within the config grid.
    #[arg(long, default_value_t = 0)]
    pub experiment: usize,
    #[arg(long, default_value_t = 0)]
    pub trial: usize,
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn config(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: e.to_string(),
        }
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: e.to_string(),
        }
    }
}

impl RunArgs {
    fn overrides(&self) -> Layer {
        Layer {
            scenario: self.scenario,
            feedback: self.feedback,
            run: Some(RunSection {
                seed: self.seed,
                trials: self.trials,
                rounds: self.rounds,
                ..RunSection::default()
            }),
            regularization: Some(RegularizationSection {
                rho: self.rho,
                lambda: self.lambda,
            }),
            ..Layer::default()
        }
    }
}

/// Loads the config file and applies the flag overrides to every
/// experiment. Experiments with zero trials are dropped.
pub fn resolve_experiments(args: &RunArgs) -> Result<(ConfigFile, Vec<ScenarioConfig>), Failure> {
    let file = ConfigFile::load(&args.config).map_err(Failure::config)?;
    let mut configs = Vec::new();
    for (k, layer) in file.layers().into_iter().enumerate() {
        let config = layer
            .overlay(args.overrides())
            .resolve()
            .map_err(|e| Failure::config(format!("experiment {}: {e}", k + 1)))?;
        if config.trials == 0 {
            continue;
        }
        config
            .validate()
            .map_err(|e| Failure::config(format!("experiment {}: {e}", k + 1)))?;
        configs.push(config);
    }
    Ok((file, configs))
}

fn output_dir(args: &RunArgs, file: &ConfigFile) -> PathBuf {
    if let Some(dir) = &args.out {
        return dir.clone();
    }
    if let Some(dir) = std::env::var_os(OUT_DIR_ENV).filter(|d| !d.is_empty()) {
        return PathBuf::from(dir);
    }
    file.output
        .as_ref()
        .and_then(|o| o.dir.clone())
        .map_or_else(|| PathBuf::from("out"), PathBuf::from)
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text)
        .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
}

/// Executes `run` and returns the written files.
pub fn run(args: &RunArgs) -> Result<Vec<PathBuf>, Failure> {
    let start = Instant::now();
    let (file, configs) = resolve_experiments(args)?;
    let dir = output_dir(args, &file);
    std::fs::create_dir_all(&dir)
        .map_err(|e| Failure::runtime(format!("cannot create {}: {e}", dir.display())))?;

    let manifest_path = dir.join(MANIFEST);
    let resolved = ConfigFile::materialized(&configs, None)
        .to_toml()
        .map_err(Failure::runtime)?;
    let mut manifest = format!(
        "# setpoint-oco {}\n# resolved configuration; pass this file to --config to reproduce\n\n{resolved}",
        env!("CARGO_PKG_VERSION")
    );
    write(&manifest_path, &manifest)?;

    let mut results = Vec::with_capacity(configs.len());
    for config in &configs {
        let result = run_experiment(config).map_err(|e| {
            Failure::runtime(format!("{}/{}: {e}", config.scenario, config.feedback))
        })?;
        results.push(result);
    }

    let tables = [
        (ROUNDS, rounds_table(&results)),
        (SUMMARY, summary_table(&results)),
        (TRAJECTORIES, trajectories_table(&results)),
    ];
    let mut files = vec![manifest_path.clone()];
    for (name, table) in &tables {
        let text = table.to_csv(name).map_err(Failure::runtime)?;
        let path = dir.join(name);
        write(&path, &text)?;
        files.push(path);
    }

    manifest.push_str(&format!(
        "\n# duration_seconds = {:.3}\n# outputs = {}\n",
        start.elapsed().as_secs_f64(),
        files
            .iter()
            .filter_map(|f| f.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect::<Vec<_>>()
            .join(", ")
    ));
    write(&manifest_path, &manifest)?;

    if !args.quiet {
        print!("{}", format_summary(&results));
        println!("wrote {} files to {}", files.len(), dir.display());
    }
    Ok(files)
}

pub fn fleet(args: &FleetArgs) -> Result<String, Failure> {
    let file = ConfigFile::load(&args.config).map_err(Failure::config)?;
    let layers = file.layers();
    let layer = layers.get(args.experiment).ok_or_else(|| {
        Failure::config(format!(
            "experiment index {} out of range ({} experiments)",
            args.experiment,
            layers.len()
        ))
    })?;
    let config = layer.resolve().map_err(Failure::config)?;
    fleet_table(&config, args.trial).map_err(|e| match e {
        Error::InvalidConfiguration(_) => Failure::config(e),
        other => Failure::runtime(other),
    })
}

/// Parses `args` and runs the selected command, returning the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let outcome = match &cli.command {
        Command::Run(args) => run(args).map(|_| ()),
        Command::Fleet(args) => fleet(args).map(|t| print!("{t}")),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
