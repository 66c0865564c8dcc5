fn main() {
    std::process::exit(ntk_cli::run(std::env::args_os()));
}
