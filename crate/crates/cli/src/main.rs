use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rdlab_core::rates::{Quantity, RunDir};
use rdlab_core::Config;

mod commands;
mod report;

/// Environment variable that overrides `output_dir` from the config.
pub const OUTPUT_ROOT_VAR: &str = "RDLAB_OUTPUT_ROOT";

#[derive(Debug, Parser)]
#[command(name = "rdlab", version, about = "Reaction-diffusion studies at large diffusion")]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print only the verdict line.
    #[arg(long, short, global = true)]
    quiet: bool,
    /// Worker threads for sweeps and cloud construction.
    #[arg(long, short, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Resolvent gap against d_eps with a log-log rate fit.
    ResolventRate,
    /// Decay of the fluctuation w(t) against the predicted rate.
    Decay,
    /// Smallest eigenvalues of the diffusion operator.
    Eigs {
        #[arg(long, default_value_t = 3)]
        count: usize,
    },
    /// The -eps u'' = cos(2 pi x) example and its scaling in eps.
    ExampleOptimal,
    /// Equilibria and attractor of the limiting ODE.
    Attractor,
    /// Hausdorff distance between PDE and ODE attractors across the sweep.
    HausdorffSweep,
    /// Deflection of the PDE attractor and the invariant-manifold graph.
    Manifold,
    /// Any single rate quantity over the configured sweep.
    Sweep {
        #[arg(value_parser = parse_quantity)]
        quantity: Quantity,
    },
    /// Summary table over finished run directories.
    Report {
        runs: Vec<PathBuf>,
    },
}

fn parse_quantity(s: &str) -> Result<Quantity, String> {
    s.parse::<Quantity>().map_err(|e| e.to_string())
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("configuration: {0}")]
    Config(rdlab_core::Error),
    #[error("{0}")]
    Runtime(rdlab_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<rdlab_core::Error> for CliError {
    fn from(e: rdlab_core::Error) -> Self {
        use rdlab_core::Error as E;
        match e {
            E::InvalidParameter(_) | E::Parse { .. } | E::NotFound(_) => CliError::Config(e),
            other => CliError::Runtime(other),
        }
    }
}

/// What a study reports back before the run is sealed.
pub struct Outcome {
    pub metrics: std::collections::BTreeMap<String, f64>,
    pub verdict: String,
    pub passed: bool,
}

pub struct Context {
    pub config: Config,
    pub quiet: bool,
}

impl Context {
    pub fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path).map_err(CliError::Config)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(CliError::Config)?;
    Ok(cfg)
}

fn output_root(cfg: &Config) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if !root.is_empty() => PathBuf::from(root),
        _ => PathBuf::from(&cfg.output_dir),
    }
}

fn run(cli: Cli) -> Result<bool, CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot size the thread pool: {e}")))?;
    }
    if let Command::Report { runs } = &cli.command {
        return report::report(runs, cli.quiet);
    }
    let ctx = Context {
        config: load_config(&cli)?,
        quiet: cli.quiet,
    };
    let label = match &cli.command {
        Command::ResolventRate => "resolvent-rate".to_string(),
        Command::Decay => "decay".into(),
        Command::Eigs { .. } => "eigs".into(),
        Command::ExampleOptimal => "example-optimal".into(),
        Command::Attractor => "attractor".into(),
        Command::HausdorffSweep => "hausdorff-sweep".into(),
        Command::Manifold => "manifold".into(),
        Command::Sweep { quantity } => format!("sweep-{quantity}"),
        Command::Report { .. } => unreachable!(),
    };
    let mut dir = RunDir::create(&output_root(&ctx.config), &label)?;
    dir.write("config.toml", &ctx.config.to_toml())?;
    let result = match &cli.command {
        Command::ResolventRate => commands::resolvent_rate(&ctx, &mut dir),
        Command::Decay => commands::decay(&ctx, &mut dir),
        Command::Eigs { count } => commands::eigs(&ctx, &mut dir, *count),
        Command::ExampleOptimal => commands::example_optimal(&ctx, &mut dir),
        Command::Attractor => commands::attractor(&ctx, &mut dir),
        Command::HausdorffSweep => commands::hausdorff_sweep(&ctx, &mut dir),
        Command::Manifold => commands::manifold(&ctx, &mut dir),
        Command::Sweep { quantity } => commands::sweep(&ctx, &mut dir, *quantity),
        Command::Report { .. } => unreachable!(),
    };
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            // the INCOMPLETE marker stays; record why
            let _ = dir.write("error.txt", &format!("{e}\n"));
            return Err(e);
        }
    };
    let path = dir.path().to_path_buf();
    let verdict = format!("VERDICT: {} {label}: {}", if outcome.passed { "PASS" } else { "FAIL" }, outcome.verdict);
    dir.finish(&ctx.config, &label, outcome.metrics, &verdict, outcome.passed)?;
    ctx.say(format!("run directory: {}", path.display()));
    println!("{verdict}");
    Ok(outcome.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
