fn main() {
    std::process::exit(sense_core::cli::run(std::env::args_os()));
}
