use std::process::ExitCode;

fn main() -> ExitCode {
    seq2set::cli::main_with_args(std::env::args_os())
}
