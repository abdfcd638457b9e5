fn main() {
    std::process::exit(qalign::cli::dispatch(std::env::args_os()));
}
