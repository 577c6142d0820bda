use clap::Parser;

fn main() {
    let cli = raymimic::Cli::parse();
    std::process::exit(raymimic::run(cli));
}
