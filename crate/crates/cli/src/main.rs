fn main() {
    std::process::exit(blemish_cli::run(std::env::args_os()));
}
