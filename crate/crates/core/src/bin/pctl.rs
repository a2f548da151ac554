fn main() {
    std::process::exit(pctl::cli::run(std::env::args_os()));
}
