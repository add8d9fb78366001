fn main() {
    std::process::exit(tristage_bench::cli::main_with_args(std::env::args_os()));
}
