use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use cadd_service::{router, Service, ServiceConfig};
use clap::Parser;

#[derive(Parser)]
#[command(name = "cadd-service", about = "Serve slide analysis over HTTP")]
struct Args {
    /// TOML config; CADD_CHECKPOINT, CADD_DATA_DIR, CADD_WORKERS and CADD_PORT override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let config = ServiceConfig::load(args.config.as_deref())?;
    let addr = format!("{}:{}", config.host, config.port);
    let service = Arc::new(tokio::task::block_in_place(|| Service::start(config))?);
    log::info!("checkpoint {} loaded, listening on {addr}", service.checkpoint_id());
    let listener = tokio::net::TcpListener::bind(&addr).await.with_context(|| format!("binding {addr}"))?;
    axum::serve(listener, router(Arc::clone(&service)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    tokio::task::block_in_place(|| service.shutdown());
    Ok(())
}
