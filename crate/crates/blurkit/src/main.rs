fn main() {
    std::process::exit(blurkit::cli::run());
}
