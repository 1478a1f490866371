fn main() {
    std::process::exit(ood_sentinel::cli::run(std::env::args_os()));
}
