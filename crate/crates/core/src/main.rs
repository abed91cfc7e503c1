fn main() {
    std::process::exit(dynrank::cli::main());
}
