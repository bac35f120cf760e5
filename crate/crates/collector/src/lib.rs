//! Collector service: accepts client uploads, answers the dashboard, and
//! produces the release CSVs.

pub mod api;
pub mod config;

use std::sync::Arc;

use axum::Router;
use homescope_core::store::{Store, StoreError};
use tower_http::services::ServeDir;

pub use api::{router, AppState, Shared};
pub use config::{Config, ConfigError};

#[derive(Debug, thiserror::Error)]
pub enum CollectorError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn state_from_config(config: &Config) -> Result<Shared, CollectorError> {
    let store = Store::open(&config.store)?;
    Ok(Arc::new(AppState::new(store, config.list_databases()?, config.label_rules()?, config.registry()?)))
}

/// The API plus, if configured, the dashboard bundle at `/`.
pub fn app(state: Shared, config: &Config) -> Router {
    let r = router(state);
    match &config.ui_dir {
        Some(dir) => r.fallback_service(ServeDir::new(dir)),
        None => r,
    }
}

pub async fn serve(config: Config) -> Result<(), CollectorError> {
    let state = state_from_config(&config)?;
    let listener = tokio::net::TcpListener::bind(config.bind).await?;
    tracing::info!(addr = %listener.local_addr()?, store = %config.store.display(), "collector listening");
    axum::serve(listener, app(state, &config))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
