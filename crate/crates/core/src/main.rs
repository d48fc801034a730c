fn main() {
    std::process::exit(pairmask::cli::run(std::env::args_os()));
}
