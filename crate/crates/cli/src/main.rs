fn main() {
    std::process::exit(recdistill_cli::main_with_args(std::env::args_os()));
}
