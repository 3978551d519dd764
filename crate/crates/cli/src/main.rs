fn main() {
    std::process::exit(birdsong_cli::run(std::env::args_os()));
}
