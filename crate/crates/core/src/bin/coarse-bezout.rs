fn main() {
    std::process::exit(coarse_bezout::cli::run(std::env::args_os()));
}
