fn main() {
    std::process::exit(comet::cli::run(std::env::args_os()));
}
