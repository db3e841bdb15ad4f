fn main() {
    std::process::exit(spkeval::cli::run_cli(std::env::args_os()));
}
