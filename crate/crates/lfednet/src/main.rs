fn main() {
    std::process::exit(lfednet::cli::run(std::env::args_os()));
}
