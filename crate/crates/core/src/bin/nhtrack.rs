fn main() -> std::process::ExitCode {
    nhtrack::cli::main()
}
