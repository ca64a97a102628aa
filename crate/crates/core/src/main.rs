use clap::Parser;

fn main() {
    let cli = qdiff::cli::Cli::parse();
    if let Err(e) = qdiff::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
