fn main() {
    std::process::exit(aggmark::cli::main());
}
