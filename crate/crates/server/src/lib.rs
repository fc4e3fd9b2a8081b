//! Immercity service: configuration, experiment sessions and the HTTP API.

pub mod api;
pub mod config;
pub mod sessions;

use std::future::Future;
use std::sync::Arc;

use immercity_core::{Clock, ContentStore, SystemClock};

use crate::api::AppState;
use crate::config::Config;
use crate::sessions::SessionStore;

/// Opens the persistent stores named by `config`.
pub fn open_state(config: Config) -> anyhow::Result<Arc<AppState>> {
    open_state_with_clock(config, Arc::new(SystemClock))
}

pub fn open_state_with_clock(config: Config, clock: Arc<dyn Clock>) -> anyhow::Result<Arc<AppState>> {
    let store = ContentStore::open(config.store_file(), clock.clone())
        .map_err(|e| anyhow::anyhow!("opening {}: {e}", config.store_file().display()))?;
    let sessions = SessionStore::open(&config.sessions_file(), clock)
        .map_err(|e| anyhow::anyhow!("opening {}: {e}", config.sessions_file().display()))?;
    Ok(Arc::new(AppState::new(config, Arc::new(store), Arc::new(sessions))))
}

/// Serves the API on `listener` until `shutdown` resolves.
pub async fn serve(
    state: Arc<AppState>,
    listener: tokio::net::TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, api::router(state)).with_graceful_shutdown(shutdown).await
}
