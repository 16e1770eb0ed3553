use merbin::cli;

fn main() {
    std::process::exit(cli::run_main());
}
