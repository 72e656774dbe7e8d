fn main() {
    std::process::exit(r2unet::cli::run(std::env::args()));
}
