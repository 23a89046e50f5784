fn main() {
    std::process::exit(mutacc::cli::main_with_args(std::env::args_os()));
}
