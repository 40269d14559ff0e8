fn main() {
    std::process::exit(battkit::cli::run(std::env::args_os()));
}
