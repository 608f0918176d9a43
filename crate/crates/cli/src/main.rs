use std::process::ExitCode;

use clap::{Parser, Subcommand};
use edgesplit_cli::commands::{self, DseArgs, GenArgs, ProfileArgs, RunArgs, StageArgs, ValidateArgs, WorkerCliArgs};
use edgesplit_cli::CliError;

/// Split a CNN across edge devices, generate per-rank plans and packages,
/// run them as a process mesh, and search mappings for energy, memory and
/// throughput trade-offs.
///
/// Exit status: 0 success, 1 invalid input, 2 I/O failure, 3 runtime failure.
#[derive(Debug, Parser)]
#[command(name = "edgesplit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a model (and optionally a platform and mapping).
    Validate(ValidateArgs),
    /// Cut the model into sub-models under a mapping.
    Split(StageArgs),
    /// Generate the sender/receiver tables and the rankfile.
    Commgen(StageArgs),
    /// Generate and check one execution plan per rank.
    Plan(StageArgs),
    /// Run the whole front end and back end and write deployment packages.
    Package(StageArgs),
    /// Launch the packages as a local process mesh and collect results.
    Run(RunArgs),
    /// Time every layer on the platform's resource kinds.
    Profile(ProfileArgs),
    /// Search mappings with NSGA-II against a profile.
    Dse(DseArgs),
    /// Write a built-in fixture set.
    Gen(GenArgs),
    /// Run one rank (started by `run`).
    #[command(hide = true)]
    Rank(WorkerCliArgs),
}

fn list(paths: &[std::path::PathBuf]) -> String {
    paths.iter().map(|p| format!("{}\n", p.display())).collect()
}

fn dispatch(cmd: &Command) -> Result<String, CliError> {
    Ok(match cmd {
        Command::Validate(a) => commands::cmd_validate(a)?,
        Command::Split(a) => list(&commands::cmd_split(a)?),
        Command::Commgen(a) => list(&commands::cmd_commgen(a)?),
        Command::Plan(a) => list(&commands::cmd_plan(a)?),
        Command::Package(a) => {
            let o = commands::cmd_package(a)?;
            format!(
                "{}manifest {} ({:.0} ms)\n",
                list(&o.packages),
                o.manifest.display(),
                o.wall_time_ms
            )
        }
        Command::Run(a) => {
            let r = commands::cmd_run(a)?;
            format!("{} inferences, {:.2} fps\n", r.outputs.len(), r.throughput_fps)
        }
        Command::Profile(a) => {
            let p = commands::cmd_profile(a)?;
            format!("{} layers profiled into {}\n", p.layers.len(), a.out.display())
        }
        Command::Dse(a) => {
            println!("{}", serde_json::to_string(&serde_json::json!({ "config": &a_config(a) })).unwrap());
            let o = commands::cmd_dse(a)?;
            format!("{} Pareto points in {}\n", o.points, o.pareto_csv.display())
        }
        Command::Gen(a) => list(&commands::cmd_gen(a)?),
        Command::Rank(a) => {
            commands::cmd_rank(a)?;
            String::new()
        }
    })
}

fn a_config(a: &DseArgs) -> edgesplit::dse::GAConfig {
    edgesplit::dse::GAConfig {
        population_size: a.population,
        generations: a.generations,
        mutation_prob: a.mutation,
        crossover_prob: a.crossover,
        seed: a.seed,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
