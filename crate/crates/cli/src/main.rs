fn main() {
    std::process::exit(pmp_cli::run(std::env::args_os()));
}
