fn main() {
    std::process::exit(geohmt::cli::run(std::env::args_os()));
}
