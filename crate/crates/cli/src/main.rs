use std::process::ExitCode;

fn main() -> ExitCode {
    nit_cli::app::main_with(std::env::args_os())
}
