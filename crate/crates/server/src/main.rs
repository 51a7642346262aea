use std::net::SocketAddr;
use std::sync::Arc;

use anyhow::Context;
use clap::Parser;
use curation_server::cli::{self, Cli, Command};
use tracing_subscriber::EnvFilter;

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();

    match Cli::parse().command {
        Command::Serve {
            store,
            host,
            port,
            token,
        } => {
            let stage = Arc::new(store.open()?);
            let addr: SocketAddr = format!("{host}:{port}").parse().context("invalid listen address")?;
            let listener = tokio::net::TcpListener::bind(addr)
                .await
                .with_context(|| format!("binding {addr}"))?;
            tracing::info!(%addr, store = %store.store.display(), auth = token.is_some(), "serving");
            axum::serve(listener, curation_server::router(stage, token))
                .with_graceful_shutdown(async {
                    let _ = tokio::signal::ctrl_c().await;
                    tracing::info!("shutting down");
                })
                .await?;
            Ok(())
        }
        other => {
            let stdout = std::io::stdout();
            cli::run(other, &mut stdout.lock())
        }
    }
}
