use std::process::ExitCode;

use clap::Parser;

use kgcrf_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(manifest) => {
            println!("{}", manifest.to_json());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("kgcrf: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
