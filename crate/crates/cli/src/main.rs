fn main() {
    std::process::exit(nrulab_cli::run_cli(std::env::args_os()));
}
