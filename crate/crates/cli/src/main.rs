fn main() {
    std::process::exit(hcount_cli::run(std::env::args_os()));
}
