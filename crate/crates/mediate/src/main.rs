fn main() {
    std::process::exit(mediate::cli::main_with_args(std::env::args_os()));
}
