fn main() {
    std::process::exit(vdp::cli::run(std::env::args_os()));
}
