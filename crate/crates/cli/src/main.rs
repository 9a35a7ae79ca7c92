fn main() {
    std::process::exit(exflow_cli::run(std::env::args_os()));
}
