//! Network front end for [`animo::relay::Relay`].
//!
//! One hub task owns the relay and is the only writer to the registry and
//! event log. Connections (raw TCP with newline-delimited frames, or
//! WebSocket with one frame per text message) forward decoded envelopes to
//! the hub over a channel, so each connection's frames are handled in
//! arrival order.
//!
//! Pairing: a client says `hello` with a `token`; the first two distinct
//! users presenting the same token become a dyad, the earlier one drawing
//! circles. Already-paired users get `paired` straight away.

mod clock;
mod hub;
mod transport;

use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use animo::relay::{EventSink, Relay};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;

pub use clock::{Clock, ManualClock, SystemClock};

use hub::Command;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub bind: String,
    /// `0` picks a free port.
    pub tcp_port: u16,
    /// WebSocket listener; `None` disables it.
    pub ws_port: Option<u16>,
    /// How often expiry runs. `None` means only on [`ServerHandle::sweep_now`].
    pub sweep_interval: Option<Duration>,
    /// Registry snapshot rewritten after each new pairing.
    pub registry_path: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            tcp_port: 7878,
            ws_port: Some(7879),
            sweep_interval: Some(Duration::from_millis(250)),
            registry_path: None,
        }
    }
}

pub struct ServerHandle<S: EventSink> {
    pub tcp_addr: SocketAddr,
    pub ws_addr: Option<SocketAddr>,
    commands: mpsc::UnboundedSender<Command>,
    hub: JoinHandle<Relay<S>>,
    tasks: Vec<JoinHandle<()>>,
}

impl<S: EventSink + Send + 'static> ServerHandle<S> {
    /// Runs an expiry sweep now and waits for it to finish.
    pub async fn sweep_now(&self) {
        let (tx, rx) = oneshot::channel();
        if self.commands.send(Command::Sweep { done: Some(tx) }).is_ok() {
            let _ = rx.await;
        }
    }

    /// Stops accepting connections and hands back the relay.
    pub async fn shutdown(self) -> Relay<S> {
        for t in &self.tasks {
            t.abort();
        }
        let _ = self.commands.send(Command::Shutdown);
        self.hub.await.expect("hub task panicked")
    }
}

/// Binds the listeners and starts serving.
pub async fn start<S>(config: ServerConfig, relay: Relay<S>, clock: Arc<dyn Clock>) -> io::Result<ServerHandle<S>>
where
    S: EventSink + Send + 'static,
{
    let tcp = TcpListener::bind((config.bind.as_str(), config.tcp_port)).await?;
    let tcp_addr = tcp.local_addr()?;
    let ws = match config.ws_port {
        Some(port) => Some(TcpListener::bind((config.bind.as_str(), port)).await?),
        None => None,
    };
    let ws_addr = ws.as_ref().map(TcpListener::local_addr).transpose()?;

    let (commands, rx) = mpsc::unbounded_channel();
    let hub = tokio::spawn(hub::run(relay, clock, rx, config.registry_path.clone()));
    let mut tasks = vec![tokio::spawn(transport::accept_tcp(tcp, commands.clone()))];
    if let Some(ws) = ws {
        tasks.push(tokio::spawn(transport::accept_ws(ws, commands.clone())));
    }
    if let Some(every) = config.sweep_interval {
        let tx = commands.clone();
        tasks.push(tokio::spawn(async move {
            let mut tick = tokio::time::interval(every);
            loop {
                tick.tick().await;
                if tx.send(Command::Sweep { done: None }).is_err() {
                    break;
                }
            }
        }));
    }
    log::info!("relay listening on {tcp_addr} (tcp) {ws_addr:?} (websocket)");
    Ok(ServerHandle {
        tcp_addr,
        ws_addr,
        commands,
        hub,
        tasks,
    })
}
