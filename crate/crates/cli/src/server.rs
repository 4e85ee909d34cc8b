// SPDX-License-Identifier: Apache-2.0

//! Network front end for one session.
//!
//! Every connection gets a reader and a writer task. Readers forward frames
//! to a single event loop that owns the [`Session`]; the loop applies them in
//! arrival order, runs the tick clock and queues replies onto the writers.
//! One port serves both transports: a connection whose first bytes are an
//! HTTP `GET` is upgraded to WebSocket (one message per text frame), anything
//! else is newline-delimited JSON.

use std::collections::BTreeMap;
use std::fs::File;
use std::future::Future;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::Path;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot};
use tokio_tungstenite::tungstenite::Message as WsMessage;
use tracing::{debug, info, warn};

use tourcast_core::harness::record::{LogHeader, LOG_FORMAT, LOG_VERSION};
use tourcast_core::protocol::{decode, encode, Body, Message};
use tourcast_core::session::Outbound;
use tourcast_core::{ClientId, Session, SessionEvent};

enum Inbound {
    Connect { peer: SocketAddr, outbox: mpsc::UnboundedSender<String>, reply: oneshot::Sender<ClientId> },
    Frame { from: ClientId, text: String },
    Closed { from: ClientId },
}

/// Streams applied events to a replayable log file.
struct EventLog(BufWriter<File>);

impl EventLog {
    fn create(path: &Path, session: &Session) -> std::io::Result<Self> {
        let mut w = BufWriter::new(File::create(path)?);
        let header = LogHeader {
            format: LOG_FORMAT.into(),
            version: LOG_VERSION,
            world: session.world().doc().clone(),
            config: session.config().clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        Ok(EventLog(w))
    }

    fn record(&mut self, event: &SessionEvent) {
        let written = serde_json::to_writer(&mut self.0, event).map_err(std::io::Error::from);
        if let Err(e) = written.and_then(|_| self.0.write_all(b"\n")) {
            warn!("event log write failed: {e}");
        }
    }

    fn flush(&mut self) {
        if let Err(e) = self.0.flush() {
            warn!("event log flush failed: {e}");
        }
    }
}

struct EventLoop {
    session: Session,
    outboxes: BTreeMap<ClientId, mpsc::UnboundedSender<String>>,
    log: Option<EventLog>,
}

impl EventLoop {
    fn apply(&mut self, event: SessionEvent) -> Vec<Outbound> {
        let out = self.session.apply(&event);
        if let Some(log) = &mut self.log {
            log.record(&event);
        }
        out
    }

    fn deliver(&self, out: Vec<Outbound>) {
        for o in out {
            if let Some(tx) = self.outboxes.get(&o.to) {
                let _ = tx.send(String::from_utf8(encode(&o.msg)).expect("JSON is UTF-8"));
            }
        }
    }

    fn on_frame(&mut self, from: ClientId, text: &str) {
        let msg = match decode(text.as_bytes()) {
            Ok(m) => m,
            Err(e) => {
                debug!(client = from.0, "undecodable frame: {e}");
                let reply = Message { seq: 0, sender: ClientId::SERVER, body: Body::Error { reason: e.to_string(), in_reply_to: None } };
                self.deliver(vec![Outbound { to: from, msg: reply }]);
                return;
            }
        };
        let (seq, kind) = (msg.seq, msg.body.type_name());
        let out = self.apply(SessionEvent::Message { from, msg });
        let rejection = out.iter().find_map(|o| match &o.msg.body {
            Body::Error { reason, in_reply_to: Some(s) } if o.to == from && *s == seq => Some(reason.clone()),
            _ => None,
        });
        let t = self.session.now();
        match rejection {
            None => info!(client = from.0, seq, kind, t, "accepted"),
            Some(reason) => debug!(client = from.0, seq, kind, t, reason, "rejected"),
        }
        self.deliver(out);
    }
}

pub async fn bind(addr: &str) -> anyhow::Result<TcpListener> {
    TcpListener::bind(addr).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => anyhow::anyhow!("cannot listen on {addr}: port busy"),
        _ => anyhow::anyhow!("cannot listen on {addr}: {e}"),
    })
}

/// Serves `session` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    session: Session,
    log_path: Option<&Path>,
    shutdown: impl Future<Output = ()>,
) -> anyhow::Result<()> {
    let log = log_path.map(|p| EventLog::create(p, &session)).transpose()?;
    let dt = Duration::from_secs_f64(session.config().tick_dt());
    let mut lp = EventLoop { session, outboxes: BTreeMap::new(), log };
    let (inbox_tx, mut inbox) = mpsc::unbounded_channel::<Inbound>();
    let mut ticker = tokio::time::interval(dt);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    tokio::pin!(shutdown);
    info!(addr = %listener.local_addr()?, tick_rate = lp.session.config().tick_rate, "serving");

    loop {
        tokio::select! {
            _ = &mut shutdown => break,
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    tokio::spawn(connection(stream, peer, inbox_tx.clone()));
                }
                Err(e) => warn!("accept failed: {e}"),
            },
            Some(event) = inbox.recv() => match event {
                Inbound::Connect { peer, outbox, reply } => {
                    let client = lp.session.connect();
                    if let Some(log) = &mut lp.log {
                        log.record(&SessionEvent::Connect { client });
                    }
                    lp.outboxes.insert(client, outbox);
                    info!(client = client.0, %peer, "connected");
                    let _ = reply.send(client);
                }
                Inbound::Frame { from, text } => lp.on_frame(from, &text),
                Inbound::Closed { from } => {
                    lp.outboxes.remove(&from);
                    let out = lp.apply(SessionEvent::Disconnect { client: from });
                    info!(client = from.0, "disconnected");
                    lp.deliver(out);
                }
            },
            _ = ticker.tick() => {
                let out = lp.apply(SessionEvent::Tick);
                lp.deliver(out);
                if let Some(log) = &mut lp.log {
                    log.flush();
                }
            }
        }
    }
    if let Some(log) = &mut lp.log {
        log.flush();
    }
    info!(ticks = lp.session.tick_count(), "stopped");
    Ok(())
}

async fn connection(stream: TcpStream, peer: SocketAddr, inbox: mpsc::UnboundedSender<Inbound>) {
    let mut head = [0u8; 4];
    let websocket = matches!(stream.peek(&mut head).await, Ok(4) if &head == b"GET ");
    let (outbox, rx) = mpsc::unbounded_channel();
    let (reply, id) = oneshot::channel();
    if inbox.send(Inbound::Connect { peer, outbox, reply }).is_err() {
        return;
    }
    let Ok(from) = id.await else { return };
    let result = if websocket { websocket_session(stream, from, &inbox, rx).await } else { ndjson_session(stream, from, &inbox, rx).await };
    if let Err(e) = result {
        debug!(client = from.0, "connection ended: {e}");
    }
    let _ = inbox.send(Inbound::Closed { from });
}

async fn ndjson_session(
    stream: TcpStream,
    from: ClientId,
    inbox: &mpsc::UnboundedSender<Inbound>,
    mut rx: mpsc::UnboundedReceiver<String>,
) -> anyhow::Result<()> {
    let (read, mut write) = stream.into_split();
    let writer = tokio::spawn(async move {
        while let Some(mut line) = rx.recv().await {
            line.push('\n');
            if write.write_all(line.as_bytes()).await.is_err() {
                break;
            }
        }
    });
    let mut lines = BufReader::new(read).lines();
    while let Some(line) = lines.next_line().await? {
        if line.trim().is_empty() {
            continue;
        }
        if inbox.send(Inbound::Frame { from, text: line }).is_err() {
            break;
        }
    }
    writer.abort();
    Ok(())
}

async fn websocket_session(
    stream: TcpStream,
    from: ClientId,
    inbox: &mpsc::UnboundedSender<Inbound>,
    mut rx: mpsc::UnboundedReceiver<String>,
) -> anyhow::Result<()> {
    let ws = tokio_tungstenite::accept_async(stream).await?;
    let (mut sink, mut source) = ws.split();
    let writer = tokio::spawn(async move {
        while let Some(text) = rx.recv().await {
            if sink.send(WsMessage::Text(text)).await.is_err() {
                break;
            }
        }
    });
    while let Some(frame) = source.next().await {
        let text = match frame? {
            WsMessage::Text(t) => t,
            WsMessage::Binary(b) => String::from_utf8_lossy(&b).into_owned(),
            WsMessage::Close(_) => break,
            _ => continue,
        };
        if inbox.send(Inbound::Frame { from, text }).is_err() {
            break;
        }
    }
    writer.abort();
    Ok(())
}
