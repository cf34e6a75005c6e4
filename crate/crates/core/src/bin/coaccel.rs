fn main() -> std::process::ExitCode {
    coaccel::cli::main()
}
