//! Serves the mock scoring backend until killed.

use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use dexkit::selection::mock::{MockBehavior, MockServer};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Behavior {
    Hashed,
    Fixed,
    Garbage,
    MissingCriterion,
}

#[derive(Debug, Parser)]
#[command(name = "dexkit-mllm-mock")]
struct Args {
    #[arg(long, default_value = "127.0.0.1:0")]
    addr: String,
    #[arg(long, value_enum, default_value = "hashed")]
    behavior: Behavior,
    /// Criteria returned by `fixed`, in wire order.
    #[arg(long, num_args = 4, default_values_t = [7.0, 7.0, 7.0, 7.0])]
    scores: Vec<f64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let behavior = match args.behavior {
        Behavior::Hashed => MockBehavior::Hashed,
        Behavior::Fixed => MockBehavior::Fixed([args.scores[0], args.scores[1], args.scores[2], args.scores[3]]),
        Behavior::Garbage => MockBehavior::Garbage,
        Behavior::MissingCriterion => MockBehavior::MissingCriterion,
    };
    match MockServer::bind(&args.addr, behavior) {
        Ok(server) => {
            println!("{}", server.url());
            server.join();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
