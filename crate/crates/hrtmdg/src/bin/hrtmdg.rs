fn main() {
    std::process::exit(hrtmdg::cli::run());
}
