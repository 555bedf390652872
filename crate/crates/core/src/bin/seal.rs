fn main() {
    std::process::exit(seal_core::cli::run(std::env::args_os()));
}
