fn main() {
    std::process::exit(myofiber::cli::run(std::env::args_os()));
}
