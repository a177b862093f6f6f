use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(sae_cli::run(std::env::args_os()))
}
