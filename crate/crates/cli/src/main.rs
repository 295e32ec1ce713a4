use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = storyecho_cli::Cli::parse();
    storyecho_cli::init_logging(cli.verbose);
    match storyecho_cli::run(&cli) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(out.text.as_bytes());
            let _ = stdout.flush();
            ExitCode::from(out.code as u8)
        }
        Err(e) => {
            match e.downcast_ref::<storyecho_core::engine::EngineError>() {
                Some(engine) => eprintln!("error: {}: {e:#}", engine.code()),
                None => eprintln!("error: {e:#}"),
            }
            ExitCode::FAILURE
        }
    }
}
