//! HTTP session service for adaptive self-assessment tests.

pub mod api;
pub mod app;
pub mod config;
pub mod error;
pub mod store;

use std::sync::Arc;

use tokio::net::TcpListener;

pub use app::{router, AppState};
pub use config::ServiceConfig;

/// Binds `config.bind` and serves until `shutdown` resolves.
pub async fn serve(
    state: Arc<AppState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = TcpListener::bind(&state.config.bind).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
