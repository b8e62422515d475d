fn main() {
    std::process::exit(thermshape::cli::run(std::env::args_os()));
}
