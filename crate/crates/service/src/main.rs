use clap::Parser;
use tracing_subscriber::EnvFilter;

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("B2D_LOG").unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = b2d_service::cli::Cli::parse();
    let mut stdout = std::io::stdout().lock();
    if let Err(err) = b2d_service::cli::execute(cli, &mut stdout) {
        eprintln!("{}", serde_json::to_string(&err).unwrap_or_else(|_| err.to_string()));
        std::process::exit(err.exit_code());
    }
}
