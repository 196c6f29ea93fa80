fn main() {
    std::process::exit(concord_cli::run(std::env::args_os()));
}
