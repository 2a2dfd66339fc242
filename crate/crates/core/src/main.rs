fn main() {
    std::process::exit(crowdlearn::cli::main_with_args(std::env::args_os().collect()));
}
