fn main() {
    std::process::exit(trajalloc::cli::run(std::env::args_os()));
}
