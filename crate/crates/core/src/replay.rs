//! Replays a telemetry trace as OSC traffic, the way a headset client
//! would have sent it.

use std::io;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::osc::{encode_message, ClientEvent, OscMessage};
use crate::telemetry::{TelemetryEvent, UiKind};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("cannot reach {target}: {reason}")]
    UnreachableTarget { target: String, reason: String },
    #[error("trace row {row}: {reason}")]
    MalformedTrace { row: usize, reason: String },
}

/// The client events a trace row stands for. Pose rows expand to a
/// position and a rotation; session rows produce nothing.
pub fn row_events(row: &TelemetryEvent) -> Result<Vec<ClientEvent>, String> {
    Ok(match row {
        TelemetryEvent::Pose {
            position, orientation, ..
        } => vec![
            ClientEvent::Position {
                xyz: position.map(|v| v as f32),
            },
            ClientEvent::Rotation {
                quaternion: orientation.map(|v| v as f32),
            },
        ],
        TelemetryEvent::Teleport { to, .. } => vec![ClientEvent::Seat { id: to.label() }],
        TelemetryEvent::Ui { kind, payload, .. } => vec![match kind {
            UiKind::Play => ClientEvent::Play { label: payload.clone() },
            UiKind::Stop => ClientEvent::Stop,
            UiKind::TrialAdvance => ClientEvent::TrialNext,
            UiKind::Info => ClientEvent::Info {
                attribute: payload.clone(),
            },
            UiKind::SourceSelect => ClientEvent::Source { id: payload.clone() },
            UiKind::Rating => {
                let mut it = payload.splitn(3, ',');
                let (Some(attribute), Some(label), Some(value)) = (it.next(), it.next(), it.next()) else {
                    return Err(format!("rating payload {payload:?} is not attribute,label,value"));
                };
                let value = value
                    .trim()
                    .parse()
                    .map_err(|_| format!("rating value {value:?} is not an integer"))?;
                ClientEvent::Rating {
                    attribute: attribute.into(),
                    label: label.into(),
                    value,
                }
            }
        }],
        TelemetryEvent::Session { .. } => Vec::new(),
    })
}

/// When each row goes out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pacing {
    /// At the recorded timestamps, relative to the first row.
    Recorded,
    /// Row `i` at `i / rate` seconds.
    Rate(f64),
    /// Back to back.
    Immediate,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ReplayReport {
    pub rows: usize,
    pub datagrams: usize,
    pub elapsed_ms: f64,
    /// Lateness of each send against its schedule.
    pub mean_jitter_ms: f64,
    pub max_jitter_ms: f64,
}

pub fn replay(
    target: impl ToSocketAddrs + std::fmt::Display,
    rows: &[TelemetryEvent],
    pacing: Pacing,
) -> Result<ReplayReport, ReplayError> {
    let unreachable = |reason: String| ReplayError::UnreachableTarget {
        target: target.to_string(),
        reason,
    };
    let addr: SocketAddr = target
        .to_socket_addrs()
        .map_err(|e| unreachable(e.to_string()))?
        .next()
        .ok_or_else(|| unreachable("no address".into()))?;
    let mut packets: Vec<(usize, Vec<Vec<u8>>)> = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let events = row_events(row).map_err(|reason| ReplayError::MalformedTrace { row: i + 1, reason })?;
        let bytes = events
            .iter()
            .map(|e| encode_message(&e.to_message()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ReplayError::MalformedTrace {
                row: i + 1,
                reason: e.to_string(),
            })?;
        packets.push((i, bytes));
    }
    let mut report = ReplayReport {
        rows: rows.len(),
        ..ReplayReport::default()
    };
    if rows.is_empty() {
        return Ok(report);
    }
    let bind: SocketAddr = if addr.is_ipv6() {
        "[::]:0".parse().expect("literal")
    } else {
        "0.0.0.0:0".parse().expect("literal")
    };
    let socket = UdpSocket::bind(bind).map_err(|e| unreachable(e.to_string()))?;
    socket.connect(addr).map_err(|e| unreachable(e.to_string()))?;
    let t0 = rows[0].t();
    let start = Instant::now();
    let mut late_sum = 0.0;
    let mut sent_rows = 0usize;
    for (i, datagrams) in packets {
        let due = match pacing {
            Pacing::Recorded => Duration::from_millis(rows[i].t().saturating_sub(t0)),
            Pacing::Rate(hz) => Duration::from_secs_f64(i as f64 / hz),
            Pacing::Immediate => Duration::ZERO,
        };
        let now = start.elapsed();
        if due > now {
            std::thread::sleep(due - now);
        }
        let late = start.elapsed().saturating_sub(due).as_secs_f64() * 1e3;
        for d in &datagrams {
            send(&socket, d).map_err(|e| unreachable(e.to_string()))?;
            report.datagrams += 1;
        }
        if !datagrams.is_empty() && pacing != Pacing::Immediate {
            late_sum += late;
            sent_rows += 1;
            report.max_jitter_ms = report.max_jitter_ms.max(late);
        }
    }
    report.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    if sent_rows > 0 {
        report.mean_jitter_ms = late_sum / sent_rows as f64;
    }
    Ok(report)
}

fn send(socket: &UdpSocket, bytes: &[u8]) -> io::Result<()> {
    // a refused earlier datagram surfaces on the next call; retry once
    match socket.send(bytes) {
        Err(e) if e.kind() == io::ErrorKind::ConnectionRefused => socket.send(bytes).map(|_| ()),
        r => r.map(|_| ()),
    }
}

/// Convenience for callers that already hold decoded messages.
pub fn messages(rows: &[TelemetryEvent]) -> Result<Vec<OscMessage>, ReplayError> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            row_events(r)
                .map(|evs| evs.iter().map(ClientEvent::to_message).collect::<Vec<_>>())
                .map_err(|reason| ReplayError::MalformedTrace { row: i + 1, reason })
        })
        .collect::<Result<Vec<_>, _>>()
        .map(|v| v.into_iter().flatten().collect())
}
