fn main() {
    std::process::exit(rapl_lab::cli::main_with(std::env::args_os()));
}
