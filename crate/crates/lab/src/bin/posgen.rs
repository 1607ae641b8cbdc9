use clap::Parser;
use resonance_lab::cli::{cmd_gen, PosgenCli, PosgenCommand};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let PosgenCli { command: PosgenCommand::Gen(args) } = PosgenCli::parse();
    if let Err(e) = cmd_gen(&args) {
        eprintln!("error: {e:#}");
        std::process::exit(2);
    }
}
