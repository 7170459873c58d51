fn main() {
    std::process::exit(coneboot::cli::dispatch(std::env::args_os()));
}
