fn main() {
    std::process::exit(bathtub::cli::main_with_args(std::env::args_os()));
}
