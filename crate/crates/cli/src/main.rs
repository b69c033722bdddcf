fn main() {
    std::process::exit(effectfuse_cli::main_with_args(std::env::args_os()));
}
