fn main() {
    std::process::exit(sslvecm::cli::run(std::env::args_os()));
}
