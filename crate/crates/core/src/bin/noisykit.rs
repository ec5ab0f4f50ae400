fn main() {
    std::process::exit(noisykit::cli::main_with_args(std::env::args_os()));
}
