use clap::Parser;

fn main() {
    let cli = amr_cli::Cli::parse();
    amr_cli::init_logging(&cli);
    std::process::exit(amr_cli::run(cli));
}
