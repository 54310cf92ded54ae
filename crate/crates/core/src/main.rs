fn main() {
    std::process::exit(paramcrop_core::cli::run_cli(std::env::args_os()));
}
