fn main() {
    std::process::exit(lumactl::run_cli(std::env::args_os()));
}
