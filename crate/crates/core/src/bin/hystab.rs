fn main() {
    std::process::exit(hystab::cli::run());
}
