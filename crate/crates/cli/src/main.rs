//! `instabilitylab` command-line front end.

mod app;
mod commands;
mod config;

use clap::Parser;

fn main() {
    let cli = app::Cli::parse();
    let code = app::configure_threads(std::env::var("INSTABILITYLAB_THREADS").ok())
        .and_then(|()| app::dispatch(cli))
        .unwrap_or_else(|e| {
            eprintln!("{e}");
            e.exit_code()
        });
    std::process::exit(code);
}
