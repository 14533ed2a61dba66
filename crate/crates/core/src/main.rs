fn main() {
    std::process::exit(vlnmine::cli::main_with_args(std::env::args_os()));
}
