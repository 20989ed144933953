fn main() {
    std::process::exit(sepl::cli::main_with_args(std::env::args_os()));
}
