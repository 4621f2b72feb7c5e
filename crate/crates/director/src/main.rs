use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::Parser;
use semcam_director::{app, ServiceState};

/// Serves trained semantic camera models over HTTP.
#[derive(Parser, Debug)]
#[command(name = "semcam-director", version)]
struct Args {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Directory holding `d2p.json` and `p2d.json`.
    #[arg(long)]
    model_dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let state = ServiceState::load(&args.model_dir).context("loading models")?;
    eprintln!("models {} ({} descriptors)", state.version, state.descriptors.len());
    let addr = SocketAddr::new(args.host, args.port);
    let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app(Arc::new(state))).await?;
    Ok(())
}
