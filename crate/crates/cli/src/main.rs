use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ppa_cli::{commands, settings, HarnessError, RunConfig, OUTPUT_ROOT_VAR};
use ppa_core::agent::Policy;

#[derive(Parser)]
#[command(name = "ppa", version, about = "Energy-efficient video streaming with symmetric DDPG")]
struct Cli {
    /// Output root; defaults to $PPA_OUTPUT_ROOT, then ./runs.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a setting, e.g. `--set nn.architecture=fc`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seeds as `0,1,2` or `0..10`; shorthand for `--set run.seeds=...`.
    #[arg(long)]
    seeds: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, HarnessError> {
        let mut overrides = self.overrides.clone();
        if let Some(s) = &self.seeds {
            overrides.push(format!("run.seeds={s}"));
        }
        Ok(RunConfig::load(self.config.as_deref(), &overrides)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent per seed and write learning curves.
    Train(ConfigArgs),
    /// Evaluate a checkpoint greedily next to a random-action baseline.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Print free-parameter counts of the fully-connected and symmetric agents.
    CountParams(ConfigArgs),
    /// Plan and execute the perfect-prediction baseline.
    Oracle(ConfigArgs),
}

fn output_root(cli: &Cli) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn run(cli: &Cli) -> Result<(), HarnessError> {
    let root = output_root(cli);
    match &cli.command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let report = commands::train(&cfg, &root)?;
            for (seed, records) in &report.records {
                let tail = &records[records.len().saturating_sub(100)..];
                let mean = tail.iter().map(|r| r.ret).sum::<f64>() / tail.len().max(1) as f64;
                println!("seed {seed}: {} episodes, mean return of last {} = {mean:.4}", records.len(), tail.len());
            }
            println!("{}", report.dir.display());
        }
        Command::Eval { checkpoint, config } => {
            let cfg = config.resolve()?;
            let report = commands::eval(&cfg, checkpoint, &root)?;
            println!("{:>7} {:>12} {:>12} {:>12} {:>8}", "policy", "return", "energy_J", "penalty", "stalls");
            for (name, p) in [("greedy", Policy::Greedy), ("random", Policy::Random)] {
                let [ret, energy, penalty, stalls] = report.summary(p);
                println!("{name:>7} {ret:>12.5} {energy:>12.5} {penalty:>12.5} {stalls:>8.3}");
            }
            println!("{}", report.dir.display());
        }
        Command::CountParams(args) => {
            let cfg = args.resolve()?;
            let rows = commands::count_params(&cfg)?;
            print!("{}", commands::format_counts(&cfg, &rows));
        }
        Command::Oracle(args) => {
            let cfg = args.resolve()?;
            let report = commands::run_oracle(&cfg, &root)?;
            let n = report.rows.len().max(1) as f64;
            let mean = |f: &dyn Fn(&commands::OracleRow) -> f64| report.rows.iter().map(f).sum::<f64>() / n;
            println!("episodes {}", report.rows.len());
            println!("mean realized return   {:.5}", mean(&|r| r.evaluation.ret));
            println!("mean expected energy   {:.5} J", mean(&|r| r.expected_energy));
            println!("mean equal-rate energy {:.5} J", mean(&|r| r.equal_rate_energy));
            println!("mean just-in-time      {:.5} J", mean(&|r| r.just_in_time_energy));
            println!("{}", report.dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{body}");
            ExitCode::from(match e {
                HarnessError::Settings(settings::SettingsError::Io { .. }) => 1,
                HarnessError::Settings(_) | HarnessError::Indivisible { .. } => 2,
                _ => 1,
            })
        }
    }
}
