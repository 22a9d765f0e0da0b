use std::process::ExitCode;

fn main() -> ExitCode {
    advi::cli::run(std::env::args_os())
}
