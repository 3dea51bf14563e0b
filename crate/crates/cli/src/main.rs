fn main() {
    std::process::exit(piham::run_from(std::env::args_os()));
}
