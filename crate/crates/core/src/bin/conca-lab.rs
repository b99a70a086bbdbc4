fn main() {
    std::process::exit(conca_lab::cli::run(std::env::args_os()));
}
