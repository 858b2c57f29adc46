//! Command-line tools and HTTP service.

pub mod commands;
pub mod config;
pub mod error;
pub mod server;

use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use blurdecomp_nets::{Decomposer, Predictor};
pub use error::{CliError, Result};

#[derive(Parser, Debug)]
#[command(
    name = "blurdecomp",
    version,
    about = "Motion-guided decomposition of a blurry image into a sharp sequence"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic training and validation set.
    Synth(commands::SynthArgs),
    /// Train the two-stage decomposer.
    TrainDecomposer(commands::TrainArgs),
    /// Train the guidance predictor.
    TrainPredictor(commands::TrainArgs),
    /// Decompose one blurry image.
    Decompose(commands::DecomposeArgs),
    /// Solve a synthesized scene exactly from its flows.
    Oracle(commands::OracleArgs),
    /// Run an evaluation protocol.
    Eval(commands::EvalArgs),
    /// Start the HTTP service; the address comes from `BLURDECOMP_ADDR`.
    Serve(ServeArgs),
}

#[derive(clap::Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub predictor: Option<PathBuf>,
    /// Directory for uploads and job outputs.
    #[arg(long, default_value = "store")]
    pub store: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::TrainDecomposer(a) => commands::train_decomposer_cmd(&a),
        Command::TrainPredictor(a) => commands::train_predictor_cmd(&a),
        Command::Decompose(a) => commands::decompose(&a),
        Command::Oracle(a) => commands::oracle(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Serve(a) => {
            let model = Decomposer::load(&a.model)?;
            let predictor = a.predictor.as_deref().map(Predictor::load).transpose()?;
            let state = Arc::new(server::AppState::new(model, predictor, &a.store)?);
            let addr = std::env::var(server::ADDR_ENV).unwrap_or_else(|_| server::DEFAULT_ADDR.to_string());
            tokio::runtime::Runtime::new()?.block_on(server::serve(state, &addr))
        }
    }
}
