fn main() {
    std::process::exit(crowdcrop::cli::run(std::env::args_os()));
}
