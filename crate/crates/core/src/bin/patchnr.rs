fn main() {
    std::process::exit(patchnr::cli::dispatch(std::env::args_os()));
}
