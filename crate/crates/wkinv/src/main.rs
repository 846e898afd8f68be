fn main() {
    std::process::exit(wkinv::cli::main_with_args(std::env::args_os()));
}
