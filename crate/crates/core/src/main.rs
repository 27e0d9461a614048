fn main() {
    std::process::exit(tfl::cli::main());
}
