use clap::Parser;
use ddereach_cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
