//! HTTP service over an event-sourced flat-file store.

pub mod api;
pub mod error;
pub mod events;
pub mod service;
pub mod state;
pub mod store;

pub use api::router;
pub use error::{Result, ServiceError};
pub use service::{Health, IngestReport, RankerWeights, Service, ServiceConfig};
pub use state::State;
pub use store::{replay, FaultInjector, Store, StoreOptions};

use std::net::SocketAddr;

/// Binds, prints the bound address on stdout, and serves until ctrl-c.
pub async fn serve(svc: Service, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    println!("listening on http://{local}");
    tracing::info!(%local, "service started");
    if svc.config().background_jobs {
        svc.spawn_jobs();
    }
    axum::serve(listener, router(svc))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
