use clap::Parser;
use rsc_cli::{exit_code, run, RunConfig};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cfg = RunConfig::parse();
    let result = run(&cfg);
    match &result {
        Ok(slots) => eprintln!("{} slot(s) written to {}", slots.len(), cfg.out.display()),
        Err(e) => eprintln!("error: {e}"),
    }
    std::process::exit(exit_code(&result));
}
