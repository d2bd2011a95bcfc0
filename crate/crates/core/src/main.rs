fn main() {
    std::process::exit(tokcast::cli::run(std::env::args_os()));
}
