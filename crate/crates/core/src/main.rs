fn main() {
    std::process::exit(hypertri::cli::run(std::env::args_os()));
}
