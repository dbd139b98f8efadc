fn main() {
    std::process::exit(lantest::cli::main_with_args(std::env::args_os()));
}
