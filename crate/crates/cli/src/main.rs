fn main() {
    std::process::exit(pots_cli::run(std::env::args_os()));
}
