fn main() {
    std::process::exit(spacetime_assembly::cli::main_with_args(std::env::args_os()));
}
