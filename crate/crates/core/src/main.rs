use std::io;
use std::process::ExitCode;

use clap::Parser;
use psg::cli::{error_line, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = cli.workers().and_then(|workers| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(|e| psg::PsgError::Config(format!("thread pool: {e}")))?;
        cli.execute(&mut io::stdout().lock())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
