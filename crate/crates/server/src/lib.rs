//! HTTP surface of the session service.
//!
//! All routes live under `/v1` and exchange JSON. Errors share one body
//! shape, `{"error": <kind>, "message": <text>, "field": <name|null>}`:
//!
//! | kind                         | status |
//! |------------------------------|--------|
//! | `NotFound`                   | 404    |
//! | `Conflict`                   | 409    |
//! | `Validation`                 | 422    |
//! | `Timeout`                    | 504    |
//! | other generation failures    | 502    |
//! | `Storage`, `Internal`        | 500    |
//!
//! Telemetry is streamed as server-sent events; see [`routes`].

mod driver;
mod error;
pub mod routes;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use copilot_sim::session::{SessionManager, TelemetryMessage};
use tokio::sync::broadcast;

pub use error::ApiError;
pub use routes::router;

/// How running sessions are advanced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pace {
    /// Wall clock matches simulation time: one telemetry frame per tick.
    RealTime,
    /// `steps` control steps every `period`; a zero period runs flat out.
    Accelerated { steps: usize, period: Duration },
    /// Nothing advances sessions on its own (tests drive the manager).
    Manual,
}

/// Buffered telemetry messages per subscriber before it is reported lagged.
const CHANNEL_CAPACITY: usize = 1024;

/// Shared state behind every handler.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    manager: Arc<SessionManager>,
    channels: Mutex<HashMap<String, broadcast::Sender<TelemetryMessage>>>,
    driving: Mutex<std::collections::HashSet<String>>,
    pace: Pace,
}

impl AppState {
    /// Wires the manager's telemetry into per-session broadcast channels.
    pub fn new(manager: SessionManager, pace: Pace) -> Self {
        let manager = Arc::new(manager);
        let inner = Arc::new(Inner {
            manager: manager.clone(),
            channels: Mutex::new(HashMap::new()),
            driving: Mutex::new(Default::default()),
            pace,
        });
        let weak = Arc::downgrade(&inner);
        manager.set_sink(move |id, msg| {
            if let Some(inner) = weak.upgrade() {
                if let Some(tx) = inner.channels.lock().expect("channel map poisoned").get(id) {
                    // No subscribers is fine; telemetry is fire-and-forget.
                    let _ = tx.send(msg.clone());
                }
            }
        });
        Self { inner }
    }

    pub fn manager(&self) -> &Arc<SessionManager> {
        &self.inner.manager
    }

    pub fn pace(&self) -> Pace {
        self.inner.pace
    }

    pub(crate) fn open_channel(&self, id: &str) {
        let (tx, _) = broadcast::channel(CHANNEL_CAPACITY);
        self.inner.channels.lock().expect("channel map poisoned").insert(id.to_string(), tx);
    }

    pub(crate) fn subscribe(&self, id: &str) -> Option<broadcast::Receiver<TelemetryMessage>> {
        self.inner.channels.lock().expect("channel map poisoned").get(id).map(|tx| tx.subscribe())
    }

    /// Dropping the sender ends every open telemetry stream of the session
    /// once buffered messages are drained.
    pub(crate) fn close_channel(&self, id: &str) {
        self.inner.channels.lock().expect("channel map poisoned").remove(id);
    }
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(addr: std::net::SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
