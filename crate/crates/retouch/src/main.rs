fn main() {
    std::process::exit(retouch::cli::main_entry());
}
