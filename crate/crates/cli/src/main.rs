fn main() {
    std::process::exit(arlnet_cli::run(std::env::args_os()));
}
