use clap::Parser;

fn main() {
    let cli = ae_synth::cli::Cli::parse();
    match ae_synth::cli::run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    }
}
