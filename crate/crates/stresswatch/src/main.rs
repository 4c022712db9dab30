fn main() {
    std::process::exit(stresswatch::cli::run(std::env::args_os()));
}
