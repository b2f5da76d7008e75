fn main() {
    std::process::exit(uwb_rangekit::cli::main_with(std::env::args_os()));
}
