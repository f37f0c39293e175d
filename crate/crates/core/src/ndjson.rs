//! Newline-delimited JSON access to the bus over TCP.
//!
//! Requests, one JSON object per line:
//!
//! ```text
//! {"op":"sub","topic":"/device/*"}
//! {"op":"unsub","topic":"/device/*"}
//! {"op":"pub","topic":"/device/out_Z/write","value":true}
//! ```
//!
//! A subscription streams `{"topic":..,"value":..,"ts_us":..}` lines. `pub`
//! and `unsub` answer `{"ok":true}`. Anything that fails answers a single
//! `{"error":".."}` line and the connection stays open. Only topics with a
//! registered write sink accept `pub`.

use std::collections::{HashMap, VecDeque};
use std::net::SocketAddr;
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader, Lines};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::{TcpListener, TcpStream, ToSocketAddrs};
use tokio::sync::mpsc;
use tokio::task::{JoinHandle, JoinSet};
use tracing::{debug, warn};

use crate::bus::{Bus, TopicMessage};
use crate::clock::now_us;
use crate::codec::IoValue;

pub const DEFAULT_LISTEN: &str = "127.0.0.1:7700";
const OUTBOUND_DEPTH: usize = 256;

#[derive(Debug, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
enum Op {
    Sub {
        topic: String,
        #[serde(default)]
        depth: Option<usize>,
    },
    Unsub {
        topic: String,
    },
    Pub {
        topic: String,
        value: Value,
    },
}

pub struct NdjsonServer {
    local_addr: SocketAddr,
    accept: JoinHandle<()>,
}

impl NdjsonServer {
    pub async fn bind(addr: &str, bus: Bus) -> std::io::Result<NdjsonServer> {
        let listener = TcpListener::bind(addr).await?;
        let local_addr = listener.local_addr()?;
        let accept = tokio::spawn(accept_loop(listener, bus));
        Ok(NdjsonServer { local_addr, accept })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn shutdown(self) {
        self.accept.abort();
    }
}

impl Drop for NdjsonServer {
    fn drop(&mut self) {
        self.accept.abort();
    }
}

async fn accept_loop(listener: TcpListener, bus: Bus) {
    let mut clients = JoinSet::new();
    loop {
        tokio::select! {
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    debug!(%peer, "ndjson client connected");
                    clients.spawn(serve_client(stream, bus.clone()));
                }
                Err(e) => warn!(error = %e, "accept failed"),
            },
            Some(_) = clients.join_next() => {}
        }
    }
}

async fn serve_client(stream: TcpStream, bus: Bus) {
    let _ = stream.set_nodelay(true);
    let (read, write) = stream.into_split();
    let (out_tx, out_rx) = mpsc::channel::<String>(OUTBOUND_DEPTH);
    let writer = tokio::spawn(write_lines(write, out_rx));
    let mut forwarders: HashMap<String, JoinHandle<()>> = HashMap::new();
    let mut lines = BufReader::new(read).lines();

    while let Ok(Some(line)) = lines.next_line().await {
        let received_us = now_us();
        if line.trim().is_empty() {
            continue;
        }
        let reply = match handle_line(&line, received_us, &bus, &out_tx, &mut forwarders) {
            Ok(Some(reply)) => reply,
            Ok(None) => continue,
            Err(e) => json!({ "error": e }),
        };
        if out_tx.send(reply.to_string()).await.is_err() {
            break;
        }
    }
    for (_, f) in forwarders {
        f.abort();
    }
    drop(out_tx);
    let _ = writer.await;
}

fn handle_line(
    line: &str,
    received_us: u64,
    bus: &Bus,
    out: &mpsc::Sender<String>,
    forwarders: &mut HashMap<String, JoinHandle<()>>,
) -> Result<Option<Value>, String> {
    let op: Op = serde_json::from_str(line).map_err(|e| format!("malformed line: {e}"))?;
    match op {
        Op::Sub { topic, depth } => {
            let sub = match depth {
                Some(d) => bus.subscribe_with_depth(&topic, d),
                None => bus.subscribe(&topic),
            }
            .map_err(|e| e.to_string())?;
            let out = out.clone();
            let task = tokio::spawn(async move {
                loop {
                    let message = sub.recv().await;
                    if out.send(message.to_json().to_string()).await.is_err() {
                        break;
                    }
                }
            });
            if let Some(old) = forwarders.insert(topic, task) {
                old.abort();
            }
            Ok(None)
        }
        Op::Unsub { topic } => match forwarders.remove(&topic) {
            Some(task) => {
                task.abort();
                Ok(Some(json!({ "ok": true })))
            }
            None => Err(format!("not subscribed to {topic}")),
        },
        Op::Pub { topic, value } => {
            let sink = bus.sink(&topic).ok_or_else(|| "unknown topic".to_string())?;
            let value = IoValue::from_json(&value, sink.value_type()).map_err(|e| e.to_string())?;
            bus.publish(TopicMessage::new(topic, value, received_us))
                .map_err(|e| e.to_string())?;
            Ok(Some(json!({ "ok": true })))
        }
    }
}

async fn write_lines(mut write: OwnedWriteHalf, mut rx: mpsc::Receiver<String>) {
    while let Some(mut line) = rx.recv().await {
        line.push('\n');
        if write.write_all(line.as_bytes()).await.is_err() {
            break;
        }
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad line from server: {0}")]
    Decode(#[from] serde_json::Error),
    #[error("server: {0}")]
    Server(String),
    #[error("connection closed")]
    Closed,
    #[error("timed out")]
    Timeout,
}

/// A topic message as it arrives over the wire.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct WireMessage {
    pub topic: String,
    pub value: Value,
    pub ts_us: u64,
}

/// Minimal client for the line protocol.
pub struct NdjsonClient {
    lines: Lines<BufReader<OwnedReadHalf>>,
    write: OwnedWriteHalf,
    pending: VecDeque<WireMessage>,
}

enum ServerLine {
    Message(WireMessage),
    Ok,
    Error(String),
}

impl NdjsonClient {
    pub async fn connect(addr: impl ToSocketAddrs) -> Result<NdjsonClient, ClientError> {
        let stream = TcpStream::connect(addr).await?;
        stream.set_nodelay(true)?;
        let (read, write) = stream.into_split();
        Ok(NdjsonClient {
            lines: BufReader::new(read).lines(),
            write,
            pending: VecDeque::new(),
        })
    }

    pub async fn send_raw(&mut self, line: &str) -> Result<(), ClientError> {
        self.write.write_all(line.as_bytes()).await?;
        self.write.write_all(b"\n").await?;
        Ok(())
    }

    pub async fn subscribe(&mut self, pattern: &str) -> Result<(), ClientError> {
        self.send_raw(&json!({"op": "sub", "topic": pattern}).to_string()).await
    }

    pub async fn unsubscribe(&mut self, pattern: &str) -> Result<(), ClientError> {
        self.send_raw(&json!({"op": "unsub", "topic": pattern}).to_string()).await?;
        self.reply().await
    }

    /// Publishes and waits for the server's answer. Messages arriving in the
    /// meantime are kept for [`NdjsonClient::next_message`].
    pub async fn publish(&mut self, topic: &str, value: Value) -> Result<(), ClientError> {
        self.send_raw(&json!({"op": "pub", "topic": topic, "value": value}).to_string())
            .await?;
        self.reply().await
    }

    /// Next non-message line: `Ok(())` for an ack, the error text otherwise.
    pub async fn reply(&mut self) -> Result<(), ClientError> {
        loop {
            match self.read_line().await? {
                ServerLine::Message(m) => self.pending.push_back(m),
                ServerLine::Ok => return Ok(()),
                ServerLine::Error(e) => return Err(ClientError::Server(e)),
            }
        }
    }

    pub async fn next_message(&mut self) -> Result<WireMessage, ClientError> {
        if let Some(m) = self.pending.pop_front() {
            return Ok(m);
        }
        loop {
            match self.read_line().await? {
                ServerLine::Message(m) => return Ok(m),
                ServerLine::Ok => {}
                ServerLine::Error(e) => return Err(ClientError::Server(e)),
            }
        }
    }

    pub async fn next_message_timeout(&mut self, timeout: Duration) -> Result<WireMessage, ClientError> {
        tokio::time::timeout(timeout, self.next_message())
            .await
            .map_err(|_| ClientError::Timeout)?
    }

    async fn read_line(&mut self) -> Result<ServerLine, ClientError> {
        let line = self.lines.next_line().await?.ok_or(ClientError::Closed)?;
        let value: Value = serde_json::from_str(&line)?;
        if let Some(e) = value.get("error") {
            return Ok(ServerLine::Error(e.as_str().unwrap_or_default().to_string()));
        }
        if value.get("ok").is_some() {
            return Ok(ServerLine::Ok);
        }
        Ok(ServerLine::Message(serde_json::from_value(value)?))
    }
}
