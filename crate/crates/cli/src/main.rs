mod args;
mod commands;
mod run;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use run::{log, Failure};

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Prep(a) => commands::prep(a),
        Command::TrainUcd(a) => commands::train_ucd_cmd(a),
        Command::Ibt(a) => commands::ibt(a),
        Command::Paraphrase(a) => commands::paraphrase(a),
        Command::Idiomatize(a) => commands::idiomatize(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::ExportParallel(a) => commands::export_parallel(a),
        Command::DemoMt(a) => commands::demo_mt(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            log("error", serde_json::json!({ "code": f.code(), "message": f.to_string() }));
            ExitCode::from(f.code() as u8)
        }
    }
}
