// `!(a <= b)` style comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod args;
mod commands;
mod svg;

use clap::Parser;

use args::{Cli, Command};

fn main() {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match &cli.command {
        Command::Generate(a) => commands::cmd_generate(&cli, a),
        Command::Solve(a) => commands::cmd_solve(&cli, a),
        Command::TriSolve(a) => commands::cmd_tri_solve(&cli, a),
        Command::Montecarlo(a) => commands::cmd_montecarlo(&cli, a),
        Command::Diagnose(a) => commands::cmd_diagnose(&cli, a),
    };
    if let Err(f) = result {
        eprintln!("error: {}", f.message());
        std::process::exit(f.code());
    }
}
