use std::process::ExitCode;

fn main() -> ExitCode {
    graphhist::cli::main_with(std::env::args_os())
}
