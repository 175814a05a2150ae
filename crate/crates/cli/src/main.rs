use std::process::ExitCode;

use clap::Parser;

use eoe_cli::cli::{dispatch, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok((dir, manifest)) => {
            println!(
                "{} finished in {:.1}s -> {}",
                manifest.subcommand,
                manifest.duration_seconds,
                dir.display()
            );
            for (k, v) in &manifest.summary {
                println!("  {k} = {v}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
