fn main() {
    std::process::exit(jw_cli::run(std::env::args().collect()));
}
