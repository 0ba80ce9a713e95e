fn main() {
    std::process::exit(lieloc::cli::main_with_args(std::env::args_os()));
}
