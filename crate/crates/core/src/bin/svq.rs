fn main() {
    std::process::exit(sparse_vq::experiments::cli::run(std::env::args_os()));
}
