//! Command implementations behind the `qadapt` binary.

pub mod args;
pub mod commands;
pub mod fsio;
pub mod manifest;

use std::ffi::OsString;

use clap::Parser;
use qadapt::{Error, Result};

use args::{Cli, Command};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "QADAPT_THREADS";

/// Process exit code for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::Json(_) => 2,
        Error::Infeasible(_) => 3,
        Error::Numeric(_) | Error::Diverged { .. } => 4,
        Error::Epoch { source, .. } => exit_code(source),
        Error::Io(_) => 1,
    }
}

/// Parses a full argument vector (program name first) and runs it.
pub fn run_from<I, T>(argv: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = Cli::try_parse_from(&argv).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let raw: Vec<String> = argv.iter().skip(2).map(|s| s.to_string_lossy().into_owned()).collect();
    dispatch(&cli.command, &raw)
}

pub fn dispatch(cmd: &Command, raw: &[String]) -> Result<()> {
    match cmd {
        Command::GenData(a) => commands::gen_data(a, raw),
        Command::InitConfigs(a) => commands::init_configs(a, raw),
        Command::Train(a) => commands::train(a, raw),
        Command::EvalCurve(a) => commands::eval_curve(a, raw),
        Command::ParetoReport(a) => commands::pareto_report(a, raw),
        Command::SelectConfig(a) => commands::select_config(a, raw),
        Command::Rerun(a) => {
            let m = manifest::RunManifest::read(&a.manifest)?;
            let mut args = m.args.clone();
            if let Some(out) = &a.out {
                let pos = args
                    .iter()
                    .position(|s| s == "--out")
                    .ok_or_else(|| Error::InvalidArgument("recorded command has no --out".into()))?;
                args[pos + 1] = out.to_string_lossy().into_owned();
            }
            let mut argv = vec!["qadapt".to_string(), m.command.clone()];
            argv.extend(args);
            run_from(argv)
        }
    }
}
