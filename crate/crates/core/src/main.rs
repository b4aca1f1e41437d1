fn main() {
    std::process::exit(mpml::cli::main_with_args(std::env::args_os()));
}
