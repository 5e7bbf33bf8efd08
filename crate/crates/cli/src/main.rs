fn main() {
    std::process::exit(hjh_cli::main_with_args(std::env::args_os()));
}
