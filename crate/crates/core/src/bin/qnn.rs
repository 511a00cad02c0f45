fn main() {
    std::process::exit(qnn_core::cli::run_command(std::env::args_os()));
}
