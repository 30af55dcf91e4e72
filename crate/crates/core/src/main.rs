use clap::Parser;
use cpfopt::cli::{execute, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = execute(cli) {
        eprintln!("cpfopt: {e}");
        std::process::exit(e.exit_code());
    }
}
