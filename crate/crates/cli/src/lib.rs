//! The `gl` command line: bootstrap a network, run a node, drive scenarios
//! through the HTTP API, and audit persisted chains.

mod http;
mod init;
mod node;
mod scenario;
mod table;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use http::{Api, Submitted};
pub use init::{init_network, InitReport};
pub use scenario::{run_against, RunReport};
pub use verify::{verify_node, VerifyReport};

#[derive(Debug, Parser)]
#[command(name = "gl", version, about = "GrainLedger network tool")]
pub struct Cli {
    /// Machine-readable output.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create keys, genesis blocks, and per-node directories.
    Init(InitArgs),
    /// Node operations.
    #[command(subcommand)]
    Node(NodeCommand),
    /// Generate or run demo scenarios.
    #[command(subcommand)]
    Scenario(ScenarioCommand),
    /// Audit a node's chains and compare tips with its peers.
    Verify {
        node_dir: PathBuf,
    },
    /// Submit one transaction through a node's API.
    Submit(SubmitArgs),
    /// GET an API path, e.g. /assets/Silo or /transactions/<id>.
    Get {
        path: String,
        #[command(flatten)]
        api: ApiArgs,
    },
}

#[derive(Debug, Args)]
pub struct InitArgs {
    /// Topology JSON; the default three-node network when omitted.
    #[arg(long)]
    pub topology: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Replace an existing, non-empty output directory.
    #[arg(long)]
    pub force: bool,
    /// Seed for keys and demo passwords; overrides the topology's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum NodeCommand {
    /// Run the network and serve this node's API until interrupted.
    Run {
        node_dir: PathBuf,
        /// Overrides listen_addr from node.json (as does GL_LISTEN_ADDR).
        #[arg(long)]
        listen: Option<String>,
        /// Static console bundle to serve under /ui.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ScenarioCommand {
    /// Write a random scenario CSV to stdout.
    Generate {
        #[arg(long, default_value_t = 10)]
        intakes: usize,
        #[arg(long, default_value_t = 2)]
        silos: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Submit a scenario's intake and lot flow through a node's API.
    Run {
        csv: PathBuf,
        #[command(flatten)]
        api: ApiArgs,
        /// Seed for plates, outgoing weights, and strip lots.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        channel: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct ApiArgs {
    /// Base URL of a node's API.
    #[arg(long)]
    pub against: String,
    /// USER:PASSWORD, repeatable; one login per role needed.
    #[arg(long = "user")]
    pub users: Vec<String>,
    /// Log in as the demo operators with passwords derived from this seed.
    #[arg(long)]
    pub demo_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SubmitArgs {
    #[command(flatten)]
    pub api: ApiArgs,
    #[arg(long, default_value = "grain")]
    pub contract: String,
    #[arg(long)]
    pub operation: String,
    /// Arguments as a JSON object.
    #[arg(long, default_value = "{}")]
    pub args: String,
    #[arg(long)]
    pub channel: Option<String>,
    /// Wait for the final status.
    #[arg(long)]
    pub wait: bool,
}

/// Exit 1 for runtime and verification failures, 2 for usage and config errors.
#[derive(Debug)]
pub enum Failure {
    Runtime(String),
    Usage(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Usage(_) => 2,
        }
    }
}

pub fn run(cli: Cli) -> ExitCode {
    let json = cli.json;
    let result = match cli.command {
        Command::Init(args) => init::run(&args, json),
        Command::Node(NodeCommand::Run { node_dir, listen, ui_dir }) => node::run(&node_dir, listen, ui_dir),
        Command::Scenario(ScenarioCommand::Generate { intakes, silos, seed }) => {
            print!("{}", grainledger::grain::Scenario::generate(seed, intakes, silos).to_csv());
            Ok(())
        }
        Command::Scenario(ScenarioCommand::Run { csv, api, seed, channel }) => {
            scenario::run(&csv, &api, seed, channel.as_deref(), json)
        }
        Command::Verify { node_dir } => verify::run(&node_dir, json),
        Command::Submit(args) => http::submit(&args, json),
        Command::Get { path, api } => http::get(&path, &api),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Runtime(m) | Failure::Usage(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serializes"));
}
