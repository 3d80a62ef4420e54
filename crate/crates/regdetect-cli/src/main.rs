fn main() {
    std::process::exit(regdetect_cli::run_command(std::env::args_os()));
}
