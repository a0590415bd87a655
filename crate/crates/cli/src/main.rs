mod cli;
mod commands;
mod failure;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use cli::{Cli, Command};
use commands::Context;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { failure::USAGE } else { failure::OK });
        }
    };
    let ctx = Context {
        dir: cli.dir,
        store: cli.store,
        json: cli.json,
    };
    let result = match &cli.command {
        Command::Init(a) => commands::init(&ctx, a),
        Command::Scan(a) => commands::scan(&ctx, a),
        Command::Pack(a) => commands::pack(&ctx, a),
        Command::Unpack(a) => commands::unpack_bundle(&ctx, a),
        Command::Run(a) => commands::run(&ctx, a),
        Command::Verify(a) => commands::verify(&ctx, a),
        Command::Env(c) => commands::env(&ctx, c),
        Command::Query(c) => commands::query(&ctx, c),
        Command::Publish(a) => commands::publish(&ctx, a),
    };
    let _ = std::io::stdout().flush();
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
