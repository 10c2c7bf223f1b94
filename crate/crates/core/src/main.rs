fn main() {
    std::process::exit(ulcerkit::cli::run(std::env::args_os()));
}
