fn main() {
    std::process::exit(sivsim::cli::run_from(std::env::args_os()));
}
