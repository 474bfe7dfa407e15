fn main() {
    std::process::exit(hiercode::cli::main());
}
