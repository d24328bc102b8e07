fn main() {
    std::process::exit(isoflop::cli::dispatch(std::env::args_os()));
}
