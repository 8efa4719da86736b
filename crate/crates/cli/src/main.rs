use clap::Parser;

fn main() {
    let cli = bicomp_cli::Cli::parse();
    std::process::exit(bicomp_cli::dispatch(cli));
}
