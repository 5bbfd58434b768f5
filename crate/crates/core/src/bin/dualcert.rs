fn main() {
    std::process::exit(dualcert::cli::run());
}
