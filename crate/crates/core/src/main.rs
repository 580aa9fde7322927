fn main() {
    std::process::exit(mixmem::cli::run_command(std::env::args_os()));
}
