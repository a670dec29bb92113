fn main() {
    std::process::exit(ecg_ssl::cli::main_with_args(std::env::args_os()));
}
