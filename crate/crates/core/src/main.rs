use clap::Parser;
use mpar::cli::{error_json, run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MPAR_LOG", "warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("{}", error_json(&e));
        std::process::exit(1);
    }
}
