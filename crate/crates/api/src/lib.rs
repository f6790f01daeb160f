//! HTTP service of one GrainLedger node: login, transaction submission,
//! asset queries, provenance, ingest receipts, and a server-sent event feed.

pub mod credentials;
mod error;
mod host;
mod routes;
pub mod settings;

use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

pub use error::{ApiError, ErrorBody};
pub use host::{wall_clock_ms, HostError, NodeHost, Session, StreamEvent};
pub use routes::router;

/// Serves `host` on `listener` until `shutdown` resolves, advancing the
/// network clock every `tick_ms`. Pending work is drained before returning.
pub async fn serve(
    listener: tokio::net::TcpListener,
    host: Arc<NodeHost>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let ticker = {
        let host = host.clone();
        let period = Duration::from_millis(host.settings.tick_ms.max(1));
        tokio::spawn(async move {
            let mut interval = tokio::time::interval(period);
            loop {
                interval.tick().await;
                let h = host.clone();
                if tokio::task::spawn_blocking(move || h.tick()).await.is_err() {
                    return;
                }
            }
        })
    };
    let result = axum::serve(listener, router(host.clone())).with_graceful_shutdown(shutdown).await;
    ticker.abort();
    let h = host.clone();
    let _ = tokio::task::spawn_blocking(move || h.drain()).await;
    result
}
