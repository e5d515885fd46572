fn main() -> std::process::ExitCode {
    xq::cli::main()
}
