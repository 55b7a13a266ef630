fn main() {
    std::process::exit(rmpr::cli::parse_and_dispatch(std::env::args_os()));
}
