fn main() {
    std::process::exit(ft_tsqr::cli::main_with_args(std::env::args_os()));
}
