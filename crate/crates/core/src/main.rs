fn main() {
    std::process::exit(fastgcrnn::cli::dispatch(std::env::args_os()));
}
