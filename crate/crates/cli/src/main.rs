use clap::Parser;

use qadapt_cli::args::Cli;
use qadapt_cli::{dispatch, exit_code, THREADS_ENV};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    log::warn!("could not size the thread pool: {e}");
                }
            }
            _ => {
                eprintln!("error: {THREADS_ENV} must be a positive integer, got {v:?}");
                std::process::exit(2);
            }
        }
    }
    let cli = Cli::parse();
    let raw: Vec<String> = std::env::args().skip(2).collect();
    if let Err(e) = dispatch(&cli.command, &raw) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
