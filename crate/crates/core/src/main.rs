fn main() {
    std::process::exit(avatar_core::cli::run(std::env::args_os()));
}
