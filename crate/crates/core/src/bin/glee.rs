fn main() {
    std::process::exit(glee_core::cli::run(std::env::args_os()));
}
