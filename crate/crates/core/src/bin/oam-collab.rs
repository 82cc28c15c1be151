fn main() {
    std::process::exit(oam_collab::cli::main_with_args(std::env::args_os()));
}
