use std::process::ExitCode;

use clap::Parser;
use volterra_mlmc::cli::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.resolve().and_then(|cfg| run(cli.command, &cfg)) {
        Ok(report) => {
            for f in report.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
