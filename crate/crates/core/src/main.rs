fn main() {
    std::process::exit(geolik::cli::run());
}
