fn main() {
    std::process::exit(handpilot_server::run(std::env::args_os()));
}
