fn main() {
    std::process::exit(wordart_service::cli::run(std::env::args_os(), None));
}
