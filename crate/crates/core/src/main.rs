use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(smsr::cli::run(std::env::args_os()))
}
