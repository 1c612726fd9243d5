fn main() {
    std::process::exit(comodel::cli::run(std::env::args_os()));
}
