fn main() {
    std::process::exit(pld_cli::main_with_args(std::env::args_os()));
}
