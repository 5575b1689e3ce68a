fn main() -> std::process::ExitCode {
    bridgerec::cli::main()
}
