fn main() {
    std::process::exit(tadloc::cli::run(std::env::args_os()));
}
