fn main() -> std::process::ExitCode {
    meshpdr::cli::main()
}
