fn main() {
    std::process::exit(spincool::cli::main());
}
