fn main() {
    std::process::exit(astra_core::cli::run(std::env::args()));
}
