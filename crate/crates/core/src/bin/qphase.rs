fn main() {
    std::process::exit(qphase::cli::main_with_args(std::env::args_os()));
}
