fn main() {
    std::process::exit(gbp::cli::run(std::env::args_os()));
}
