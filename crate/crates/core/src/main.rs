fn main() {
    std::process::exit(cellalign::cli::run(std::env::args_os()));
}
