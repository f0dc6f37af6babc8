use clap::Parser;

use quantcal::cli::{execute, Cli};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            std::process::exit(e.exit_code());
        }
    };
    if let Err(e) = execute(&cli) {
        eprintln!("error: {}", e.message());
        std::process::exit(e.exit_code());
    }
}
