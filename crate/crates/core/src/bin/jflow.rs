use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use std::path::PathBuf;

use jflow::config::{reference_page, PlotFormat};
use jflow::scenario::{run_path, Command, EXIT_CONFIG};

/// Modified J-flow scenarios on the flat torus and the round sphere.
#[derive(Parser, Debug)]
#[command(name = "jflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Run the flow and write the trajectory and final state.
    Simulate(RunArgs),
    /// Evaluate every functional at the initial potential.
    Functionals(RunArgs),
    /// Check the cone and properness hypotheses.
    CheckCone(RunArgs),
    /// Probe functionals along a Mabuchi geodesic (sphere only).
    GeodesicProbe(RunArgs),
    /// Run every pipeline.
    Report(RunArgs),
    /// Print the configuration reference page.
    ConfigReference,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory; overrides `outputs.directory`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Random seed; overrides `seed`.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on this.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    /// Plot format; overrides `outputs.plot`.
    #[arg(long, value_parser = ["none", "svg"])]
    plot: Option<String>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("JFLOW_LOG", "warn")).init();
    let command = Cli::command()
        .after_long_help(format!("Set JFLOW_LOG (error, warn, info, debug) for log output.\n\n{}", reference_page()));
    let cli = match Cli::from_arg_matches(&command.get_matches()) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let (command, args) = match cli.command {
        Sub::Simulate(a) => (Command::Simulate, a),
        Sub::Functionals(a) => (Command::Functionals, a),
        Sub::CheckCone(a) => (Command::CheckCone, a),
        Sub::GeodesicProbe(a) => (Command::GeodesicProbe, a),
        Sub::Report(a) => (Command::Report, a),
        Sub::ConfigReference => {
            print!("{}", reference_page());
            return;
        }
    };
    if let Some(threads) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot configure {threads} threads: {e}");
            std::process::exit(EXIT_CONFIG);
        }
    }
    let code = run_path(command, &args.config, |config| {
        if let Some(out) = args.out {
            config.outputs.directory = out;
        }
        if let Some(seed) = args.seed {
            config.seed = seed;
        }
        if let Some(plot) = args.plot {
            config.outputs.plot = plot.parse::<PlotFormat>().expect("validated by clap");
        }
    });
    std::process::exit(code);
}
