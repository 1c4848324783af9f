fn main() {
    std::process::exit(mspr::cli::run(std::env::args_os()));
}
