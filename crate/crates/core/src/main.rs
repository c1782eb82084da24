fn main() {
    std::process::exit(framestat::cli::run(std::env::args_os()));
}
