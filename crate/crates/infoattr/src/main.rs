fn main() {
    std::process::exit(infoattr::cli::run(std::env::args_os()));
}
