fn main() {
    std::process::exit(jadce::cli::run());
}
