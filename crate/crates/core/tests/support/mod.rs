#![allow(dead_code)]

use std::net::UdpSocket;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use mushra::arir::ConditionId;
use mushra::config::EngineConfig;
use mushra::dsp::BinauralDecoder;
use mushra::fixture;
use mushra::osc::{decode_packet, encode_message, ClientEvent, Notification};
use mushra::server::{Loaded, ServeOptions, Server};

pub const CONDITIONS: [&str; 4] = ["hidden_reference", "lowpass_anchor", "non_parametric", "parametric"];

/// A server on ephemeral ports with a small random dataset, plus a socket
/// receiving its OSC notifications.
pub fn start(dir: &Path, trials: &[&str], web_root: Option<&Path>) -> (Server, UdpSocket) {
    let notify = UdpSocket::bind("127.0.0.1:0").unwrap();
    notify.set_read_timeout(Some(Duration::from_millis(50))).unwrap();
    let web = web_root
        .map(|w| format!("web_root = {:?}\n", w.display().to_string()))
        .unwrap_or_default();
    let list = trials.iter().map(|t| format!("{t:?}")).collect::<Vec<_>>().join(", ");
    let text = format!(
        r#"
[dataset]
root = "data"
[osc]
listen = "127.0.0.1:0"
notify = ["{}"]
[websocket]
listen = "127.0.0.1:0"
{web}
[session]
assessor = "t01"
seed = 5
trials = [{list}]
samples_dir = "samples"
start_seat = "C3"
[output]
dir = "out"
"#,
        notify.local_addr().unwrap()
    );
    let config = EngineConfig::from_toml(&text, dir).unwrap();
    let set = fixture::random_arir_set(
        &[ConditionId::Reference, ConditionId::NonParametric, ConditionId::Parametric],
        1,
        64,
        1,
    );
    let ac = set.config();
    let mut ids: Vec<&str> = trials.to_vec();
    ids.sort();
    ids.dedup();
    let samples = ids
        .iter()
        .enumerate()
        .map(|(i, id)| fixture::noise_source(id, 6.0, ac.sample_rate, 10 + i as u64))
        .collect();
    let loaded = Loaded {
        config,
        decoder: BinauralDecoder::cardioid_pair(ac.order, ac.convention),
        set: Arc::new(set),
        samples,
    };
    (Server::start(loaded, ServeOptions::default()).unwrap(), notify)
}

pub fn send(server: &Server, event: &ClientEvent) {
    let sock = UdpSocket::bind("127.0.0.1:0").unwrap();
    sock.send_to(&encode_message(&event.to_message()).unwrap(), server.osc_addr())
        .unwrap();
}

/// Collects notifications until `done` holds for one of them or the
/// timeout passes.
pub fn notifications_until(
    sock: &UdpSocket,
    timeout: Duration,
    done: impl Fn(&Notification) -> bool,
) -> Vec<Notification> {
    let end = Instant::now() + timeout;
    let mut seen = Vec::new();
    let mut buf = [0u8; 4096];
    while Instant::now() < end {
        let Ok(n) = sock.recv(&mut buf) else { continue };
        for m in decode_packet(&buf[..n]).unwrap() {
            let note = Notification::from_message(&m).unwrap();
            let stop = done(&note);
            seen.push(note);
            if stop {
                return seen;
            }
        }
    }
    seen
}
