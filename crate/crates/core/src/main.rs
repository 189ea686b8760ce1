fn main() {
    std::process::exit(obsched::cli::main_with_args(std::env::args_os()));
}
