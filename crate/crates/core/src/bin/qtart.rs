fn main() {
    std::process::exit(qtart::cli::dispatch(std::env::args_os()));
}
