fn main() {
    std::process::exit(m3fc::cli::run(std::env::args_os()));
}
