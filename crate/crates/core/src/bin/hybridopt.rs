fn main() {
    std::process::exit(hybridopt::cli::run_from(std::env::args_os()));
}
