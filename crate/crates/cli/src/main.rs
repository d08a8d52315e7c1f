use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(cpppkit_cli::run(std::env::args_os()))
}
