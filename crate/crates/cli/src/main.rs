use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(rfl_cli::main_with(std::env::args_os()))
}
