fn main() {
    std::process::exit(slicevol_cli::run(std::env::args_os()));
}
