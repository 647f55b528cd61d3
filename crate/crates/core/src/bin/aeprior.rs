fn main() {
    std::process::exit(aeprior::cli::main_with_args(std::env::args_os()));
}
