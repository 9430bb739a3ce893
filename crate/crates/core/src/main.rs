fn main() {
    std::process::exit(upgan::cli::dispatch(std::env::args_os().skip(1)));
}
