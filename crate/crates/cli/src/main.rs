use std::process::ExitCode;

use clap::Parser;
use honest_esp_cli::args::{Cli, Command};
use honest_esp_cli::{commands, config, configure_threads, server, CliError, CliResult};

fn run() -> CliResult<()> {
    let argv = config::expand_args(std::env::args_os().collect())?;
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests print to stdout and succeed.
            let _ = e.print();
            return if e.use_stderr() { Err(CliError::Usage(String::new())) } else { Ok(()) };
        }
    };
    configure_threads()?;
    match &cli.command {
        Command::Serve(s) => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(server::serve(&s.host, s.port))?;
            Ok(())
        }
        cmd => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            for artifact in commands::execute(cmd)? {
                artifact.write(&mut lock)?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string();
            if !msg.is_empty() {
                eprintln!("error: {msg}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
