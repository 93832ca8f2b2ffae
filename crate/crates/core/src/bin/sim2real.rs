fn main() {
    std::process::exit(sim2real::cli::main_with_args(std::env::args_os()));
}
