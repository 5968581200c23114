fn main() {
    std::process::exit(normsplat::cli::run(std::env::args_os()));
}
