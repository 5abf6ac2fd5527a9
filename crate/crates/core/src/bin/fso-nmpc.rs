fn main() {
    std::process::exit(fso_nmpc::cli::run_cli(std::env::args_os()));
}
