fn main() -> std::process::ExitCode {
    sitewalk::cli::main()
}
