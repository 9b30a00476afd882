use std::process::ExitCode;

use multipoet_cli::{configure_threads, run};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(e.exit_code());
    }
    let mut stdout = std::io::stdout().lock();
    match run(std::env::args_os().collect(), &mut stdout) {
        Err(clap_err) => clap_err.exit(),
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
