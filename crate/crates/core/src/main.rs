fn main() {
    std::process::exit(losslens::cli::run(std::env::args_os()));
}
