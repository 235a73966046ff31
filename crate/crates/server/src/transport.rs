use std::sync::atomic::{AtomicU64, Ordering};

use animo::protocol::{decode, encode, Envelope};
use futures_util::{SinkExt, StreamExt};
use tokio::io::{AsyncBufReadExt, AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio_tungstenite::tungstenite::handshake::server::{Request, Response};
use tokio_tungstenite::tungstenite::Message;

use crate::hub::{Command, ConnId};

const MAX_FRAME_BYTES: usize = 64 * 1024;

static NEXT_CONN: AtomicU64 = AtomicU64::new(1);

fn next_conn() -> ConnId {
    NEXT_CONN.fetch_add(1, Ordering::Relaxed)
}

fn forward(hub: &mpsc::UnboundedSender<Command>, conn: ConnId, frame: &[u8]) {
    let cmd = match decode(frame) {
        Ok(envelope) => Command::Frame { conn, envelope },
        Err(error) => Command::BadFrame { conn, error },
    };
    let _ = hub.send(cmd);
}

pub(crate) async fn accept_tcp(listener: TcpListener, hub: mpsc::UnboundedSender<Command>) {
    loop {
        match listener.accept().await {
            Ok((stream, peer)) => {
                log::debug!("tcp connection from {peer}");
                tokio::spawn(serve_tcp(stream, hub.clone()));
            }
            Err(err) => log::warn!("tcp accept failed: {err}"),
        }
    }
}

async fn serve_tcp(stream: TcpStream, hub: mpsc::UnboundedSender<Command>) {
    let conn = next_conn();
    let (read, mut write) = stream.into_split();
    let (outbox, mut rx) = mpsc::unbounded_channel::<Envelope>();
    if hub.send(Command::Connect { conn, outbox }).is_err() {
        return;
    }
    let writer = tokio::spawn(async move {
        while let Some(env) = rx.recv().await {
            if write.write_all(&encode(&env)).await.is_err() {
                break;
            }
        }
    });
    let mut reader = BufReader::new(read);
    let mut line = Vec::new();
    loop {
        line.clear();
        match (&mut reader)
            .take(MAX_FRAME_BYTES as u64 + 1)
            .read_until(b'\n', &mut line)
            .await
        {
            Ok(0) | Err(_) => break,
            Ok(_) if line.len() > MAX_FRAME_BYTES => {
                log::warn!("closing connection {conn}: frame too large");
                break;
            }
            Ok(_) => {
                if line.iter().all(u8::is_ascii_whitespace) {
                    continue;
                }
                forward(&hub, conn, &line);
            }
        }
    }
    let _ = hub.send(Command::Disconnect { conn });
    writer.abort();
}

pub(crate) async fn accept_ws(listener: TcpListener, hub: mpsc::UnboundedSender<Command>) {
    loop {
        match listener.accept().await {
            Ok((stream, peer)) => {
                log::debug!("websocket connection from {peer}");
                tokio::spawn(serve_ws(stream, hub.clone()));
            }
            Err(err) => log::warn!("websocket accept failed: {err}"),
        }
    }
}

/// Reads `user_id` and `token` from a request query string.
pub(crate) fn hello_params(query: &str) -> (Option<String>, Option<String>) {
    let mut user = None;
    let mut token = None;
    for (k, v) in url::form_urlencoded::parse(query.as_bytes()) {
        match k.as_ref() {
            "user_id" if !v.is_empty() => user = Some(v.into_owned()),
            "token" if !v.is_empty() => token = Some(v.into_owned()),
            _ => {}
        }
    }
    (user, token)
}

#[allow(clippy::result_large_err)]
async fn serve_ws(stream: TcpStream, hub: mpsc::UnboundedSender<Command>) {
    let mut params = (None, None);
    let callback = |req: &Request, resp: Response| {
        params = hello_params(req.uri().query().unwrap_or(""));
        Ok(resp)
    };
    let ws = match tokio_tungstenite::accept_hdr_async(stream, callback).await {
        Ok(ws) => ws,
        Err(err) => {
            log::debug!("websocket handshake failed: {err}");
            return;
        }
    };
    let conn = next_conn();
    let (mut sink, mut source) = ws.split();
    let (outbox, mut rx) = mpsc::unbounded_channel::<Envelope>();
    if hub.send(Command::Connect { conn, outbox }).is_err() {
        return;
    }
    if let (Some(user), token) = params {
        let _ = hub.send(Command::Frame {
            conn,
            envelope: Envelope::hello(user, token, 0),
        });
    }
    let writer = tokio::spawn(async move {
        while let Some(env) = rx.recv().await {
            let mut bytes = encode(&env);
            bytes.pop();
            let text = String::from_utf8(bytes).expect("frames are utf-8");
            if sink.send(Message::Text(text)).await.is_err() {
                break;
            }
        }
    });
    while let Some(msg) = source.next().await {
        match msg {
            Ok(Message::Text(text)) if text.len() <= MAX_FRAME_BYTES => forward(&hub, conn, text.as_bytes()),
            Ok(Message::Binary(bytes)) if bytes.len() <= MAX_FRAME_BYTES => forward(&hub, conn, &bytes),
            Ok(Message::Close(_)) | Err(_) => break,
            Ok(Message::Text(_)) | Ok(Message::Binary(_)) => {
                log::warn!("closing websocket {conn}: frame too large");
                break;
            }
            Ok(_) => {}
        }
    }
    let _ = hub.send(Command::Disconnect { conn });
    writer.abort();
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_params() {
        assert_eq!(
            hello_params("user_id=al%20ice&token=x+y"),
            (Some("al ice".into()), Some("x y".into()))
        );
        assert_eq!(hello_params("token="), (None, None));
        assert_eq!(hello_params(""), (None, None));
        assert_eq!(hello_params("user_id=bob&other=1"), (Some("bob".into()), None));
    }
}
