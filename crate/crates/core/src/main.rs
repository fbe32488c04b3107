fn main() {
    std::process::exit(gradcon::cli::main_entry());
}
