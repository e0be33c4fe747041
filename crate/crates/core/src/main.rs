fn main() {
    surfelcore::cli::main();
}
