use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use modnet::harness::{self, scenarios, ACCURACY_FILE, SWEEP_FILE};
use modnet::policy::PolicyKind;
use modnet::simulator::probe_accuracy;
use modnet::{run_experiment, EpisodeConfig, Error, Result};

#[derive(Parser)]
#[command(name = "modnet", version, about = "Edge model selection simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of episodes and write metrics, timeline and summary files.
    Run(RunArgs),
    /// Parse and validate a configuration without running it.
    Validate(Source),
    /// List the built-in scenarios.
    Scenarios {
        /// Print the TOML source of this scenario.
        #[arg(long)]
        show: Option<String>,
    },
    /// Run the same seeds over a list of values for one parameter.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct Source {
    /// TOML configuration file.
    #[arg(long, conflicts_with = "scenario")]
    config: Option<PathBuf>,
    /// Name of a built-in scenario.
    #[arg(long)]
    scenario: Option<String>,
}

#[derive(Args)]
struct Seeds {
    /// Run seeds 0..N.
    #[arg(long, default_value_t = 100, conflicts_with = "seed_list")]
    seeds: u64,
    /// Explicit comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
}

impl Seeds {
    fn resolve(&self) -> Vec<u64> {
        self.seed_list
            .clone()
            .unwrap_or_else(|| (0..self.seeds).collect())
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    seeds: Seeds,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the configured policy.
    #[arg(long, value_parser = parse_policy)]
    policy: Option<PolicyKind>,
    /// Also measure per-context accuracy with N tasks per cell.
    #[arg(long)]
    probe: Option<u64>,
    /// Episodes included in the round-by-round timeline.
    #[arg(long, default_value_t = 10)]
    timeline: usize,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    seeds: Seeds,
    /// Dotted parameter path, e.g. `policy.epsilon`.
    #[arg(long)]
    param: String,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    /// Policies to compare; defaults to the configured one.
    #[arg(long, value_delimiter = ',', value_parser = parse_policy)]
    policy: Vec<PolicyKind>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn parse_policy(s: &str) -> std::result::Result<PolicyKind, String> {
    PolicyKind::parse(s).ok_or_else(|| {
        let names: Vec<_> = PolicyKind::ALL.iter().map(|k| k.name()).collect();
        format!("unknown policy `{s}`; expected one of {}", names.join(", "))
    })
}

fn load(source: &Source) -> Result<EpisodeConfig> {
    match (&source.config, &source.scenario) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            harness::parse_config(&text)
        }
        (None, Some(name)) => scenarios::load(name),
        (None, None) => Err(Error::Config(
            "pass --config FILE or --scenario NAME".into(),
        )),
    }
}

fn run(args: RunArgs) -> Result<()> {
    let mut config = load(&args.source)?;
    if let Some(kind) = args.policy {
        config.policy.kind = kind;
    }
    let seeds = args.seeds.resolve();
    let table = run_experiment(&config, &seeds)?;
    let artifacts = harness::write_metrics(&table, &args.out, args.timeline)?;
    if let Some(tasks) = args.probe {
        let cells = probe_accuracy(&config, tasks)?;
        harness::write_accuracy(&cells, &args.out.join(ACCURACY_FILE))?;
    }
    if !args.quiet {
        let a = &table.aggregates;
        println!(
            "{} episodes, policy {}: energy {:.6e} J (std {:.3e}), pilots {:.1}, \
             identification rate {:.4}",
            a.episodes,
            config.policy.kind.name(),
            a.energy_joules.mean,
            a.energy_joules.std,
            a.pilots.mean,
            a.identification_rate
        );
        println!("wrote {}", display_dir(&artifacts.metrics));
    }
    Ok(())
}

fn display_dir(path: &Path) -> String {
    path.parent().unwrap_or(path).display().to_string()
}

fn sweep(args: SweepArgs) -> Result<()> {
    let config = load(&args.source)?;
    let seeds = args.seeds.resolve();
    let points = harness::sweep(&config, &args.param, &args.values, &args.policy, &seeds)?;
    let path = args.out.join(SWEEP_FILE);
    harness::write_sweep(&points, &path)?;
    println!("wrote {} points to {}", points.len(), path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Validate(source) => load(&source).map(|c| {
            println!(
                "ok: {} models, {} users, policy {}",
                c.scenario.models.len(),
                c.users,
                c.policy.kind.name()
            )
        }),
        Command::Scenarios { show: Some(name) } => scenarios::source(&name).map(|s| print!("{s}")),
        Command::Scenarios { show: None } => {
            for b in scenarios::BUILT_INS {
                println!("{:<20} {}", b.name, b.summary);
            }
            Ok(())
        }
        Command::Sweep(args) => sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
