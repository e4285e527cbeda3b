fn main() {
    std::process::exit(spectral_cert::interface::cli::run_cli(std::env::args_os()));
}
