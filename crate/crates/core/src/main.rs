use clap::Parser;

use expdiag::cli::{run, Cli, EXIT_ERROR};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("{}", err.to_json());
            std::process::exit(EXIT_ERROR);
        }
    }
}
