fn main() {
    std::process::exit(ratsql::cli::run(std::env::args_os()));
}
