fn main() {
    std::process::exit(lenmap::cli::run());
}
