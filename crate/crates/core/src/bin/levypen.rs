use clap::Parser;
use levy_penalization::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(text) => print!("{text}"),
        Err(e) => {
            eprintln!("levypen: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
