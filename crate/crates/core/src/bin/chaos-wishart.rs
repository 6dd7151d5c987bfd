fn main() {
    std::process::exit(chaos_wishart::cli::main_with_args(std::env::args_os()));
}
