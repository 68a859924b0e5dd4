fn main() {
    std::process::exit(qcd_cli::run(std::env::args_os()));
}
