fn main() {
    std::process::exit(cdii::cli::main_with_args(std::env::args_os()));
}
