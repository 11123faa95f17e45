fn main() {
    std::process::exit(vilab::cli::main_with_args(std::env::args_os()));
}
