use std::process::ExitCode;

fn main() -> ExitCode {
    rsn2::cli::main()
}
