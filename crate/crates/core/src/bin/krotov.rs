use std::process::ExitCode;

fn main() -> ExitCode {
    krotov_core::cli::main()
}
