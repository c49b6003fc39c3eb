fn main() {
    std::process::exit(szo::cli::dispatch(std::env::args_os()));
}
