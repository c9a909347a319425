fn main() {
    std::process::exit(gradattr_cli::run(std::env::args_os()));
}
