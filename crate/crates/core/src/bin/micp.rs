fn main() {
    std::process::exit(micp::cli_io::cli_main(std::env::args_os()));
}
