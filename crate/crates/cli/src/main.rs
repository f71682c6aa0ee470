use std::io;
use std::process;

use clap::Parser;
use ifthen_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let stdout = io::stdout();
    if let Err(e) = run(&cli, &mut stdout.lock()) {
        eprintln!("error: {e}");
        process::exit(e.code as i32);
    }
}
