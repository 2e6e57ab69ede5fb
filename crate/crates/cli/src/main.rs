fn main() {
    std::process::exit(crf_cli::dispatch(std::env::args().skip(1).collect()));
}
