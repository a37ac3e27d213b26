fn main() {
    std::process::exit(nsl_core::cli::run(std::env::args_os()));
}
