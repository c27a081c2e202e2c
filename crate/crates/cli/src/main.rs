fn main() {
    std::process::exit(csab_cli::cli_run(std::env::args_os()));
}
