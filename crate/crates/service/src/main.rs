use clap::Parser;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "polartrace-service", about = "Polarized-trace Helmholtz solver over HTTP/JSON")]
struct Args {
    /// Address to listen on.
    #[arg(long, env = "POLARTRACE_BIND", default_value = "127.0.0.1:8730")]
    bind: String,
}

#[tokio::main]
async fn main() -> std::io::Result<()> {
    tracing_subscriber::fmt().with_env_filter(EnvFilter::from_default_env()).init();
    let args = Args::parse();
    let listener = tokio::net::TcpListener::bind(&args.bind).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    polartrace_service::serve(listener).await
}
