fn main() -> std::process::ExitCode {
    lagom::cli::main()
}
