fn main() {
    std::process::exit(safeuq::cli::dispatch(std::env::args_os()));
}
