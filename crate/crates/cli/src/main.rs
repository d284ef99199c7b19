fn main() {
    vre_cli::init_logging();
    std::process::exit(vre_cli::main_with(std::env::args_os()));
}
