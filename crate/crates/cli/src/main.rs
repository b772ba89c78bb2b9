fn main() {
    std::process::exit(embdistill_cli::main_with(std::env::args_os()));
}
