fn main() -> std::process::ExitCode {
    redwave::cli::main()
}
