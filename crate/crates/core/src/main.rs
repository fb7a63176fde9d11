use std::io;
use std::process;

use clap::Parser;
use vertx_core::cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VERTX_LOG", "error")).init();
    let cli = Cli::parse();
    let code = run(&cli, &mut io::stderr());
    process::exit(code.code());
}
