fn main() {
    std::process::exit(lipmpc::cli::main_with_args(std::env::args_os()));
}
