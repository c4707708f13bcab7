fn main() {
    std::process::exit(weedout::cli::main_from(std::env::args_os()));
}
