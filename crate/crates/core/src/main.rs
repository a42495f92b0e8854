fn main() {
    std::process::exit(tofdefog::io::cli::main_with_args(std::env::args_os()));
}
