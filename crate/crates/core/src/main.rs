fn main() {
    std::process::exit(nodal_sheet::cli::run(std::env::args_os()));
}
