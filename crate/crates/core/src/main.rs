use clap::Parser;

fn main() {
    let cli = gni::cli::Cli::parse();
    std::process::exit(gni::cli::run(cli));
}
