use std::process::ExitCode;

use clap::Parser;

/// `println!` that ignores a closed stdout (e.g. piping into `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

mod cli;
mod commands;

use cli::{Cli, Command};

/// Exit-code classes: 1 for validation and domain errors, 2 for I/O.
#[derive(Debug)]
pub enum Failure {
    Invalid(String),
    Io(String),
}

impl From<camkit::Error> for Failure {
    fn from(e: camkit::Error) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else {
            Failure::Invalid(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CAMKIT_LOG", "warn"))
        .format_timestamp(None)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };

    let result = match cli.command {
        Command::Cam(args) => commands::cam(args),
        Command::Metrics(args) => commands::metrics(args),
        Command::Split(args) => commands::split(args),
        Command::Audit(args) => commands::audit(args),
        Command::Oversample(args) => commands::oversample(args),
        Command::LossCheck(args) => commands::loss_check(args),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
