fn main() {
    std::process::exit(even_core::cli::run(std::env::args_os()));
}
