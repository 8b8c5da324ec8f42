fn main() {
    std::process::exit(compnet::cli::run(std::env::args_os()));
}
