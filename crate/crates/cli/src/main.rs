//! Command-line front end for the registration solver.

use std::process::exit;

use diffreg_cli::{args, runner};

fn main() {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    if argv.iter().any(|a| a == "--help" || a == "-h") {
        print!("{}", args::USAGE);
        exit(0);
    }
    let parsed = match args::parse(&argv) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}\n");
            eprint!("{}", args::USAGE);
            exit(1);
        }
    };
    match runner::run(&parsed) {
        Ok(code) => exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            exit(1);
        }
    }
}
