fn main() {
    std::process::exit(partnest::cli::run(std::env::args_os()));
}
