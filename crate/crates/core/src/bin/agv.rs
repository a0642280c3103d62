fn main() {
    std::process::exit(agvision::cli::run(std::env::args_os()));
}
