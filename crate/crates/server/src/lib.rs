//! HTTP service over a running head-end simulation.
//!
//! - [`sim`]: the thread that owns the simulation and runs commands in order
//! - [`hub`]: numbered, replayable fan-out of head-end notifications
//! - [`api`]: routes, error mapping and the server-sent event stream
//! - [`payload`]: request and response bodies
//!
//! [`start`] wires them together; [`Running::shutdown`] stops accepting
//! requests, ends event streams and flushes the store.

pub mod api;
pub mod hub;
pub mod payload;
pub mod sim;

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use amr_core::billing::Tariff;
use amr_core::scenario::ScenarioSummary;
use amr_core::system::System;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::watch;

pub use api::{router, ApiError, AppState};
pub use hub::{Hub, StreamEvent};
pub use sim::{SimFailure, SimHandle, SimOptions, Status};

pub struct ServerConfig {
    pub system: System,
    pub tariff: Tariff,
    pub summary: ScenarioSummary,
    pub options: SimOptions,
    /// Events kept for stream replay.
    pub retain: usize,
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("flushing the store failed: {0}")]
    Store(String),
    #[error("the simulation thread panicked")]
    SimPanicked,
    #[error("the HTTP task failed: {0}")]
    Task(String),
}

/// A started service.
pub struct Running {
    addr: SocketAddr,
    sim: SimHandle,
    hub: Arc<Hub>,
    stop: watch::Sender<bool>,
    http: tokio::task::JoinHandle<std::io::Result<()>>,
    sim_thread: JoinHandle<()>,
}

/// Starts the simulation thread and serves the API on `listener`.
pub async fn start(listener: TcpListener, config: ServerConfig) -> Result<Running, ServeError> {
    let addr = listener.local_addr()?;
    let hub = Arc::new(Hub::new(config.retain));
    let (sim, sim_thread) = sim::spawn(config.system, config.tariff, hub.clone(), config.options)?;
    let (stop, stopping) = watch::channel(false);
    let state = AppState {
        sim: sim.clone(),
        hub: hub.clone(),
        summary: Arc::new(config.summary),
        stopping: stopping.clone(),
    };
    let app = router(state);
    let mut on_stop = stopping;
    let http = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = on_stop.wait_for(|s| *s).await;
            })
            .await
    });
    tracing::info!("listening on http://{addr}");
    Ok(Running {
        addr,
        sim,
        hub,
        stop,
        http,
        sim_thread,
    })
}

impl Running {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn sim(&self) -> &SimHandle {
        &self.sim
    }

    pub fn hub(&self) -> &Arc<Hub> {
        &self.hub
    }

    /// Stops the service: no new connections, event streams closed, jobs
    /// still running answered with an error, store flushed and compacted.
    pub async fn shutdown(self) -> Result<(), ServeError> {
        let _ = self.stop.send(true);
        let flushed = self.sim.shutdown().await;
        let joined = tokio::task::spawn_blocking(move || self.sim_thread.join())
            .await
            .map_err(|e| ServeError::Task(e.to_string()))?;
        let http = self.http.await.map_err(|e| ServeError::Task(e.to_string()))?;
        joined.map_err(|_| ServeError::SimPanicked)?;
        flushed.map_err(ServeError::Store)?;
        http?;
        Ok(())
    }

    /// Serves until SIGINT or SIGTERM, then shuts down.
    pub async fn run_until_signal(self) -> Result<(), ServeError> {
        shutdown_signal().await;
        tracing::info!("signal received, shutting down");
        self.shutdown().await
    }
}

/// Resolves on SIGINT (Ctrl-C) or, on Unix, SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        () = ctrl_c => {}
        () = term => {}
    }
}
