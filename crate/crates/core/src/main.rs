use clap::Parser;

fn main() {
    let cli = semiclass::cli::Cli::parse();
    std::process::exit(semiclass::cli::run(cli));
}
