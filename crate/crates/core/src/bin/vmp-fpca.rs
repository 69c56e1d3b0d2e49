fn main() {
    vmp_fpca::cli::init_logging();
    std::process::exit(vmp_fpca::cli::run(std::env::args_os()));
}
