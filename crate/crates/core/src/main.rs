fn main() {
    std::process::exit(dynloss::cli::run(std::env::args()));
}
