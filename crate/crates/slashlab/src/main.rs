fn main() {
    std::process::exit(slashlab::cli::main_entry(std::env::args_os()));
}
