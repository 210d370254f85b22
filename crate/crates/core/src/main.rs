fn main() {
    std::process::exit(sincov::cli::run(std::env::args_os()));
}
