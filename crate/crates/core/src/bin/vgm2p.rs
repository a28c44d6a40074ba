fn main() {
    std::process::exit(vgm2p::cli::run(std::env::args_os()));
}
