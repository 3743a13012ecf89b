fn main() {
    std::process::exit(feeder_dsm::cli::cli_main(std::env::args_os()));
}
