fn main() {
    std::process::exit(alignseg::cli::main_with_args(std::env::args_os()));
}
