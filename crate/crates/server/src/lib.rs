//! Ingestion service: authenticated report submission, k-anonymous release
//! into an append-only public store, and open reads of schema, reports,
//! aggregates and exports.

pub mod aggregates;
pub mod auth;
pub mod config;
pub mod geocoder;
pub mod http;
pub mod service;
pub mod store;

use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use anonreport_core::survey::CatalogError;
use anonreport_core::Catalog;
use thiserror::Error;

pub use config::ServerConfig;
pub use service::{Clock, ManualClock, Service, SystemClock};
pub use store::{FileStore, MemoryStore, ReportStore};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Store(#[from] store::StoreError),
    #[error(transparent)]
    Policy(#[from] anonreport_core::release::PolicyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Builds the service described by `config`, restoring any pending reports
/// from its store.
pub fn build_service(config: &ServerConfig, clock: Arc<dyn Clock>) -> Result<Service, ServeError> {
    let catalog = match &config.catalog {
        Some(path) => Catalog::load(path)?,
        None => Catalog::builtin(),
    };
    let store: Arc<dyn ReportStore> = match &config.store {
        Some(dir) => Arc::new(FileStore::open(dir)?),
        None => Arc::new(MemoryStore::new()),
    };
    Ok(Service::new(Arc::new(catalog), config.policy(), config.auth()?, store, clock, None)?)
}

/// Runs the escalation pass every `interval` until the task is dropped.
pub fn spawn_maintenance(service: Arc<Service>, interval: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut ticker = tokio::time::interval(interval);
        ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            ticker.tick().await;
            let svc = service.clone();
            match tokio::task::spawn_blocking(move || svc.run_maintenance()).await {
                Ok(Ok(s)) if s.moved > 0 => {
                    tracing::info!(moved = s.moved, batches = s.released_batches, "escalated stale pools")
                }
                Ok(Ok(_)) => {}
                Ok(Err(e)) => tracing::error!(error = %e, "maintenance failed"),
                Err(e) => tracing::error!(error = %e, "maintenance task panicked"),
            }
        }
    })
}

/// Serves the API on `config.listen` until `shutdown` resolves.
pub async fn serve(config: ServerConfig, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), ServeError> {
    let listener = tokio::net::TcpListener::bind(config.listen).await?;
    serve_on(config, listener, shutdown).await
}

/// Like [`serve`], on an already bound listener.
pub async fn serve_on(
    config: ServerConfig,
    listener: tokio::net::TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    let service = Arc::new(build_service(&config, Arc::new(SystemClock))?);
    let maintenance = config
        .escalation_after
        .map(|_| spawn_maintenance(service.clone(), Duration::from_secs(config.maintenance_interval_secs.max(1))));
    tracing::info!(addr = %listener.local_addr()?, "serving");
    let result = axum::serve(listener, http::router(service)).with_graceful_shutdown(shutdown).await;
    if let Some(m) = maintenance {
        m.abort();
    }
    Ok(result?)
}
