fn main() {
    std::process::exit(spikesync::cli::run(std::env::args_os()));
}
