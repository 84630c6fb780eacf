fn main() {
    std::process::exit(semcomm_cli::run_cli(std::env::args_os()));
}
