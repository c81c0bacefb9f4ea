//! WebSocket service: pushes state frames and metrics snapshots, accepts
//! override messages into the intervention mailbox.
//!
//! The actor only ever writes snapshots into a [`LiveBoard`]; connection
//! threads read them at their own pace, so a slow or dead client cannot
//! stall training.

use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tungstenite::{Message, WebSocket};

use crate::envs::{Env, StepInfo, TaskState};
use crate::error::{Error, Result};
use crate::intervention::OverrideMailbox;
use crate::runtime::metrics::MetricsRow;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameFlags {
    pub success: bool,
    pub unsafe_contact: bool,
    pub truncated: bool,
    pub intervened: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FrameObject {
    Button { x: f64, y: f64, width: f64, band_width: f64 },
    Ball { x: f64, y: f64, r: f64 },
    Goal { x: f64, y: f64, r: f64 },
}

/// Outbound frame. Serialises with `"type":"frame"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: usize,
    pub episode_seed: u64,
    pub agent: [f64; 2],
    pub objects: Vec<FrameObject>,
    pub flags: FrameFlags,
    pub param_version: u64,
}

impl Frame {
    pub fn capture(env: &Env, info: &StepInfo, intervened: bool, param_version: u64) -> Self {
        let s = env.state();
        let objects = match &s.task {
            TaskState::Button { b } => vec![FrameObject::Button {
                x: b[0],
                y: b[1],
                width: env.params().press.width,
                band_width: env.params().press.band_width,
            }],
            TaskState::Ball { o, goal, .. } => vec![
                FrameObject::Ball {
                    x: o[0],
                    y: o[1],
                    r: env.params().push.ball_radius,
                },
                FrameObject::Goal {
                    x: goal[0],
                    y: goal[1],
                    r: env.params().push.goal_radius,
                },
            ],
        };
        Self {
            t: s.t,
            episode_seed: s.seed,
            agent: s.p,
            objects,
            flags: FrameFlags {
                success: info.success,
                unsafe_contact: info.unsafe_contact,
                truncated: info.truncated,
                intervened,
            },
            param_version,
        }
    }

    pub fn to_message(&self) -> String {
        let mut v = serde_json::to_value(self).expect("frame serialises");
        v["type"] = json!("frame");
        v.to_string()
    }
}

pub fn metrics_message(row: &MetricsRow) -> String {
    let mut v = serde_json::to_value(row).expect("metrics row serialises");
    // NaN is not JSON; absent stages go out as null
    if let Value::Object(map) = &mut v {
        for val in map.values_mut() {
            if val.is_number() && val.as_f64().is_some_and(|f| !f.is_finite()) {
                *val = Value::Null;
            }
        }
        map.insert("type".into(), json!("metrics"));
    }
    v.to_string()
}

#[derive(Clone, Debug, PartialEq)]
pub enum Inbound {
    Override([f64; 2]),
    OverrideEnd,
}

/// Parses and validates one inbound message; the error string is the
/// `reason` sent back to the client.
pub fn parse_inbound(text: &str) -> std::result::Result<Inbound, String> {
    let v: Value = serde_json::from_str(text).map_err(|e| format!("invalid JSON: {e}"))?;
    let ty = v
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| "missing string field `type`".to_string())?;
    match ty {
        "override" => {
            let arr = v
                .get("action")
                .and_then(Value::as_array)
                .ok_or_else(|| "override needs `action: [dx, dy]`".to_string())?;
            if arr.len() != 2 {
                return Err(format!("override action has {} components, expected 2", arr.len()));
            }
            let mut a = [0.0; 2];
            for (slot, x) in a.iter_mut().zip(arr) {
                *slot = x
                    .as_f64()
                    .filter(|f| f.is_finite())
                    .ok_or_else(|| "override action must be finite numbers".to_string())?;
            }
            Ok(Inbound::Override(a))
        }
        "override_end" => Ok(Inbound::OverrideEnd),
        other => Err(format!("unknown message type `{other}`")),
    }
}

pub fn error_message(reason: &str) -> String {
    json!({"type": "error", "reason": reason}).to_string()
}

/// Latest-value snapshots shared between the actor and the service.
#[derive(Debug, Default)]
pub struct LiveBoard {
    frame: Mutex<Option<String>>,
    frame_seq: AtomicU64,
    metrics: Mutex<Option<String>>,
    metrics_seq: AtomicU64,
    mailbox: Arc<OverrideMailbox>,
}

impl LiveBoard {
    pub fn new(mailbox: Arc<OverrideMailbox>) -> Self {
        Self {
            mailbox,
            ..Default::default()
        }
    }

    pub fn mailbox(&self) -> &Arc<OverrideMailbox> {
        &self.mailbox
    }

    pub fn publish_frame(&self, env: &Env, info: &StepInfo, intervened: bool, param_version: u64) {
        let msg = Frame::capture(env, info, intervened, param_version).to_message();
        *lock(&self.frame) = Some(msg);
        self.frame_seq.fetch_add(1, Ordering::Release);
    }

    pub fn publish_metrics(&self, row: &MetricsRow) {
        *lock(&self.metrics) = Some(metrics_message(row));
        self.metrics_seq.fetch_add(1, Ordering::Release);
    }

    pub fn frame_seq(&self) -> u64 {
        self.frame_seq.load(Ordering::Acquire)
    }

    fn latest(&self, seen_frame: &mut u64, seen_metrics: &mut u64) -> Vec<String> {
        let mut out = Vec::new();
        let m = self.metrics_seq.load(Ordering::Acquire);
        if m != *seen_metrics {
            *seen_metrics = m;
            out.extend(lock(&self.metrics).clone());
        }
        let f = self.frame_seq.load(Ordering::Acquire);
        if f != *seen_frame {
            *seen_frame = f;
            out.extend(lock(&self.frame).clone());
        }
        out
    }
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// A running listener. Dropping it stops accepting and closes all
/// connections.
pub struct Service {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl Service {
    /// `poll` is how often each connection checks for new snapshots.
    pub fn bind(bind: &str, board: Arc<LiveBoard>, poll: Duration) -> Result<Self> {
        let listener = TcpListener::bind(bind).map_err(|e| Error::io(bind, e))?;
        let addr = listener.local_addr().map_err(|e| Error::io(bind, e))?;
        listener
            .set_nonblocking(true)
            .map_err(|e| Error::io(bind, e))?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop_accept = stop.clone();
        let accept = std::thread::spawn(move || {
            let mut conns = Vec::new();
            while !stop_accept.load(Ordering::Acquire) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let board = board.clone();
                        let stop = stop_accept.clone();
                        conns.push(std::thread::spawn(move || {
                            // a failed connection just ends its own thread
                            let _ = serve_connection(stream, &board, &stop, poll);
                        }));
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(5));
                    }
                    Err(_) => std::thread::sleep(Duration::from_millis(20)),
                }
                conns.retain(|h: &JoinHandle<()>| !h.is_finished());
            }
            for h in conns {
                let _ = h.join();
            }
        });
        Ok(Self {
            addr,
            stop,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn serve_connection(stream: TcpStream, board: &LiveBoard, stop: &AtomicBool, poll: Duration) -> Result<()> {
    stream.set_nonblocking(false).map_err(|e| Error::io("websocket", e))?;
    let mut ws = tungstenite::accept(stream).map_err(|e| Error::Protocol(format!("handshake failed: {e}")))?;
    ws.get_mut()
        .set_read_timeout(Some(poll.max(Duration::from_millis(1))))
        .map_err(|e| Error::io("websocket", e))?;
    let (mut seen_frame, mut seen_metrics) = (0, 0);
    while !stop.load(Ordering::Acquire) {
        match ws.read() {
            Ok(Message::Text(text)) => handle_inbound(&mut ws, board, &text)?,
            Ok(Message::Binary(_)) => send(&mut ws, error_message("binary messages are not supported"))?,
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
        for msg in board.latest(&mut seen_frame, &mut seen_metrics) {
            send(&mut ws, msg)?;
        }
    }
    // operator gone: never leave a held override behind
    board.mailbox.end();
    let _ = ws.close(None);
    let _ = ws.flush();
    Ok(())
}

fn handle_inbound(ws: &mut WebSocket<TcpStream>, board: &LiveBoard, text: &str) -> Result<()> {
    match parse_inbound(text) {
        Ok(Inbound::Override(a)) => board.mailbox.post(a),
        Ok(Inbound::OverrideEnd) => board.mailbox.end(),
        Err(reason) => send(ws, error_message(&reason))?,
    }
    Ok(())
}

fn send(ws: &mut WebSocket<TcpStream>, msg: String) -> Result<()> {
    ws.send(Message::text(msg))
        .map_err(|e| Error::Protocol(format!("send failed: {e}")))
}
