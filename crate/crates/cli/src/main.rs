use clap::Parser;
use duohand_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("{}", e.line());
        std::process::exit(e.exit_code());
    }
}
