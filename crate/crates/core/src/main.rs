fn main() {
    std::process::exit(qfock::cli::main_with_args(std::env::args_os()));
}
