// SPDX-License-Identifier: Apache-2.0

//! Minimal client used by `tourcast snapshot`.

use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message as WsMessage;

use tourcast_core::protocol::{decode, encode, Body, Message};
use tourcast_core::{ClientId, StateSnapshot};

fn query() -> String {
    let msg = Message { seq: 1, sender: ClientId::SERVER, body: Body::QuerySnapshot };
    String::from_utf8(encode(&msg)).expect("JSON is UTF-8")
}

fn as_snapshot(text: &str) -> anyhow::Result<Option<StateSnapshot>> {
    match decode(text.as_bytes())?.body {
        Body::StateSnapshot { snapshot } => Ok(Some(*snapshot)),
        Body::Error { reason, .. } => anyhow::bail!("server refused: {reason}"),
        _ => Ok(None),
    }
}

/// Asks a running server for its current state. `endpoint` is `host:port`,
/// `tcp://host:port` or `ws://host:port`.
pub async fn fetch_snapshot(endpoint: &str, timeout: Duration) -> anyhow::Result<StateSnapshot> {
    tokio::time::timeout(timeout, fetch(endpoint))
        .await
        .map_err(|_| anyhow::anyhow!("no snapshot from {endpoint} within {timeout:?}"))?
}

async fn fetch(endpoint: &str) -> anyhow::Result<StateSnapshot> {
    if endpoint.starts_with("ws://") {
        let (mut ws, _) = tokio_tungstenite::connect_async(endpoint).await?;
        ws.send(WsMessage::Text(query())).await?;
        while let Some(frame) = ws.next().await {
            if let WsMessage::Text(t) = frame? {
                if let Some(s) = as_snapshot(&t)? {
                    return Ok(s);
                }
            }
        }
    } else {
        let addr = endpoint.strip_prefix("tcp://").unwrap_or(endpoint);
        let stream = TcpStream::connect(addr).await?;
        let (read, mut write) = stream.into_split();
        write.write_all(format!("{}\n", query()).as_bytes()).await?;
        let mut lines = BufReader::new(read).lines();
        while let Some(line) = lines.next_line().await? {
            if let Some(s) = as_snapshot(&line)? {
                return Ok(s);
            }
        }
    }
    anyhow::bail!("{endpoint} closed the connection before answering")
}
