fn main() {
    std::process::exit(vidgan::cli::run(std::env::args_os()));
}
