//! HTTP services.
//!
//! [`review_router`] serves the human review workflow; [`generation_router`]
//! exposes an in-process generation backend over the JSON wire protocol.

mod generation;
mod review;

use std::net::SocketAddr;

use axum::Router;
use tokio::net::TcpListener;

pub use generation::generation_router;
pub use review::{review_router, ReviewState, StatsQuery, ImageQuery};

/// Binds `addr` and serves `router` until the process is stopped.
pub async fn serve(addr: SocketAddr, router: Router) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router).await
}

/// Serves on an already bound listener. Returns the bound address and the
/// server task; used by tests and by callers that bind port 0.
pub async fn spawn(
    addr: SocketAddr,
    router: Router,
) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<std::io::Result<()>>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let task = tokio::spawn(async move { axum::serve(listener, router).await });
    Ok((local, task))
}
