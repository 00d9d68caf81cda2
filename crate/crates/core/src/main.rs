fn main() {
    std::process::exit(dblf::cli::run(std::env::args_os()));
}
