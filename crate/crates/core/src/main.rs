fn main() {
    std::process::exit(gwseg::cli::run_command(std::env::args_os()));
}
