use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(kslab::cli::main_from(std::env::args_os()))
}
