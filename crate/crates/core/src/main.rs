fn main() {
    std::process::exit(volseg::cli::run(std::env::args_os()));
}
