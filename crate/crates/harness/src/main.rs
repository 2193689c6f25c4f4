fn main() {
    std::process::exit(vaelens_harness::cli::run(std::env::args_os()));
}
