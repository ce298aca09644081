fn main() {
    std::process::exit(wattprint::cli::run());
}
