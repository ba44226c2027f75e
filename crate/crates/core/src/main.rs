fn main() {
    std::process::exit(fibroscore::app::run(std::env::args_os()));
}
