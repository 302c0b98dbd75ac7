fn main() -> std::process::ExitCode {
    roadfuse::cli::run(std::env::args_os())
}
