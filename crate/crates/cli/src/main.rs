fn main() {
    std::process::exit(matest_cli::cli_main(std::env::args_os()));
}
