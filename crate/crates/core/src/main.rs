fn main() {
    std::process::exit(foliage::cli::run_from(std::env::args_os()));
}
