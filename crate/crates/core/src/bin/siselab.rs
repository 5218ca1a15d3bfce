fn main() {
    std::process::exit(siselab::cli::run(std::env::args_os()));
}
