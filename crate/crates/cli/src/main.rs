fn main() {
    std::process::exit(supcon_cli::run(std::env::args_os()));
}
