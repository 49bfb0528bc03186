use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use teduchain_cli::{cmd_generate, cmd_inspect, cmd_sim, cmd_verify, EXIT_ERROR};
use teduchain_core::sim::GenParams;
use teduchain_node::{run_node, NodeConfig};

#[derive(Parser)]
#[command(name = "teduchain", version, about = "Education crowdfunding ledger tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a fundraiser node.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a scenario through the deterministic simulator.
    Sim {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify a ledger file.
    Verify {
        #[arg(long)]
        ledger: PathBuf,
    },
    /// Print one block of a ledger file.
    Inspect {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        index: u64,
    },
    /// Write a randomly generated scenario.
    Generate {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        nodes: usize,
        #[arg(long, default_value_t = 20)]
        sponsors: usize,
        #[arg(long, default_value_t = 10)]
        students: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(config: PathBuf) -> i32 {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let config = match NodeConfig::load(&config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_ERROR;
        }
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_ERROR;
        }
    };
    match runtime.block_on(run_node(config)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mut out, mut err) = (std::io::stdout(), std::io::stderr());
    let code = match cli.command {
        Command::Run { config } => run(config),
        Command::Sim { scenario, seed, out: dir } => cmd_sim(&scenario, seed, &dir, &mut out, &mut err),
        Command::Verify { ledger } => cmd_verify(&ledger, &mut out, &mut err),
        Command::Inspect { ledger, index } => cmd_inspect(&ledger, index, &mut out, &mut err),
        Command::Generate {
            seed,
            nodes,
            sponsors,
            students,
            out: path,
        } => {
            let params = GenParams {
                nodes,
                sponsors,
                students,
                ..GenParams::default()
            };
            cmd_generate(params, seed, &path, &mut err)
        }
    };
    ExitCode::from(code as u8)
}
