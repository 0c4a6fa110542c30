use clap::Parser;

fn main() {
    let cli = scenic_cli::Cli::parse();
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = scenic_cli::run(cli, &mut stdout) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
