fn main() {
    std::process::exit(tstatlab::cli::main_with_args(std::env::args_os()));
}
