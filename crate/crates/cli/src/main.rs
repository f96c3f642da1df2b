fn main() -> std::process::ExitCode {
    fedmlp_cli::main_with_args(std::env::args_os())
}
