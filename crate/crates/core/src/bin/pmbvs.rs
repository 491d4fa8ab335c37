fn main() {
    std::process::exit(pmbvs::cli::run(std::env::args_os()));
}
