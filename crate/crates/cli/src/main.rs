fn main() {
    std::process::exit(pathid_cli::run(std::env::args_os()));
}
