fn main() {
    std::process::exit(mmsurrogate::cli::main_with_args(std::env::args_os()));
}
