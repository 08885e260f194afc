use std::process::ExitCode;

fn main() -> ExitCode {
    cood_bench::cli::run(std::env::args_os())
}
