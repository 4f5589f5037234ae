use std::net::{SocketAddr, UdpSocket};
use std::sync::Arc;
use std::time::{Duration, Instant};

use mushra::arir::ConditionId;
use mushra::config::EngineConfig;
use mushra::dsp::BinauralDecoder;
use mushra::engine::Capture;
use mushra::fixture;
use mushra::osc::{decode_packet, encode_bundle, encode_message, Notification, OscArg, OscMessage};
use mushra::server::{Loaded, ServeOptions, Server};
use mushra_oracle::rng;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::support::{err, Check};

const CLICK_THRESHOLD: f64 = 0.1;

fn pick<'a>(r: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(r).copied().expect("non-empty")
}

fn wild_float(r: &mut ChaCha8Rng) -> f32 {
    match r.random_range(0..6) {
        0 => f32::NAN,
        1 => f32::INFINITY * if r.random() { 1.0 } else { -1.0 },
        2 => 0.0,
        3 => f32::from_bits(r.random()),
        4 => r.random_range(-1e30..1e30),
        _ => r.random_range(-2.0..2.0),
    }
}

fn random_arg(r: &mut ChaCha8Rng) -> OscArg {
    match r.random_range(0..4) {
        0 => OscArg::Int(r.random()),
        1 => OscArg::Float(wild_float(r)),
        2 => OscArg::Str((0..r.random_range(0..12)).map(|_| r.random_range(' '..='~')).collect()),
        _ => OscArg::Blob((0..r.random_range(0..16)).map(|_| r.random()).collect()),
    }
}

const SEATS: [&str; 8] = ["A1", "C3", "E5", "B4", "Z9", "", "c3", "A10"];
const LABELS: [&str; 8] = ["ref", "A", "B", "C", "D", "E", "", "hidden_reference"];
const ATTRS: [&str; 6] = [
    "basic_audio_quality",
    "localizability",
    "spatial_quality",
    "timbral_quality",
    "loudness",
    "",
];

/// A message on the client address space, well-formed or not in content.
fn plausible(r: &mut ChaCha8Rng) -> OscMessage {
    let s = |v: &str| OscArg::Str(v.to_owned());
    match r.random_range(0..11) {
        0 => OscMessage::new("/seat", vec![s(pick(r, &SEATS))]),
        1 => OscMessage::new("/head/position", (0..3).map(|_| OscArg::Float(wild_float(r))).collect()),
        2 => {
            let q: Vec<OscArg> = if r.random_bool(0.5) {
                let v: [f32; 4] = std::array::from_fn(|_| r.random_range(-1.0..1.0));
                v.iter().map(|&x| OscArg::Float(x)).collect()
            } else {
                (0..4).map(|_| OscArg::Float(wild_float(r))).collect()
            };
            OscMessage::new("/head/rotation", q)
        }
        3 => OscMessage::new("/ui/play", vec![s(pick(r, &LABELS))]),
        4 => OscMessage::new("/ui/stop", vec![]),
        5 => {
            let value = *[-5, 0, 50, 100, 101, i32::MAX, i32::MIN, r.random_range(0..=100)]
                .choose(r)
                .expect("non-empty");
            OscMessage::new(
                "/ui/rating",
                vec![s(pick(r, &ATTRS)), s(pick(r, &LABELS)), OscArg::Int(value)],
            )
        }
        6 => OscMessage::new("/ui/source", vec![s(pick(r, &["tone", "sample9", ""]))]),
        7 => OscMessage::new("/ui/trial/next", vec![]),
        8 => OscMessage::new("/ui/info", vec![s(pick(r, &ATTRS))]),
        9 => OscMessage::new(pick(r, &["/state/seat", "/foo", "/seat/extra", "/ui"]), vec![s("A1")]),
        _ => {
            let addr = pick(r, &["/seat", "/head/rotation", "/ui/rating", "/ui/play", "/ui/stop"]);
            OscMessage::new(addr, (0..r.random_range(0..6)).map(|_| random_arg(r)).collect())
        }
    }
}

fn bundle_header(out: &mut Vec<u8>, r: &mut ChaCha8Rng) {
    out.extend_from_slice(b"#bundle\0");
    out.extend_from_slice(&r.random::<u64>().to_be_bytes());
}

fn nested_bundle(depth: usize, inner: &[u8], r: &mut ChaCha8Rng) -> Vec<u8> {
    let mut packet = inner.to_vec();
    for _ in 0..depth {
        let mut outer = Vec::new();
        bundle_header(&mut outer, r);
        outer.extend_from_slice(&(packet.len() as i32).to_be_bytes());
        outer.extend_from_slice(&packet);
        packet = outer;
    }
    packet
}

fn fuzz_datagram(r: &mut ChaCha8Rng) -> Vec<u8> {
    let valid = |r: &mut ChaCha8Rng| encode_message(&plausible(r)).expect("valid address");
    match r.random_range(0..8) {
        0 => (0..r.random_range(0..200)).map(|_| r.random()).collect(),
        1 => {
            let mut b = valid(r);
            b.truncate(r.random_range(0..b.len()));
            b
        }
        2 => {
            let mut b = valid(r);
            for _ in 0..r.random_range(1..=4) {
                let i = r.random_range(0..b.len());
                b[i] ^= 1 << r.random_range(0..8);
            }
            b
        }
        3 | 4 => valid(r),
        5 => {
            let msgs: Vec<OscMessage> = (0..r.random_range(1..=4)).map(|_| plausible(r)).collect();
            encode_bundle(&msgs).expect("valid addresses")
        }
        6 => {
            let inner = valid(r);
            nested_bundle(r.random_range(1..=40), &inner, r)
        }
        _ => {
            // element sizes that lie about the remaining length
            let mut b = Vec::new();
            bundle_header(&mut b, r);
            let inner = valid(r);
            let size = match r.random_range(0..3) {
                0 => -4,
                1 => inner.len() as i32 + 4 * r.random_range(1..100),
                _ => r.random(),
            };
            b.extend_from_slice(&size.to_be_bytes());
            b.extend_from_slice(&inner);
            b
        }
    }
}

fn start_server(notify: SocketAddr, base: &std::path::Path) -> Result<(Server, Arc<Capture>), String> {
    let text = format!(
        r#"
[dataset]
root = "data"
[decoder]
builtin = "omni"
[audio]
block = 512
click_threshold = {CLICK_THRESHOLD}
[osc]
listen = "127.0.0.1:0"
notify = ["{notify}"]
[websocket]
listen = "127.0.0.1:0"
[session]
assessor = "fuzz"
seed = 11
trials = ["tone", "tone"]
samples_dir = "samples"
start_seat = "C3"
[output]
dir = "out"
"#
    );
    let config = EngineConfig::from_toml(&text, base).map_err(err)?;
    let set = fixture::impulse_arir_set(
        &[ConditionId::Reference, ConditionId::NonParametric, ConditionId::Parametric],
        1,
        0,
    );
    let ac = set.config();
    let loaded = Loaded {
        config,
        decoder: BinauralDecoder::omni_passthrough(ac.order, ac.convention),
        set: Arc::new(set),
        samples: vec![fixture::sine_source("tone", 440.0, 20.0, ac.sample_rate)],
    };
    let capture = Capture::new(48_000 * 60);
    let server = Server::start(
        loaded,
        ServeOptions {
            capture: Some(capture.clone()),
        },
    )
    .map_err(err)?;
    Ok((server, capture))
}

/// Waits for a `/state/seat` notification naming `seat`.
fn await_seat(sock: &UdpSocket, seat: &str, timeout: Duration) -> bool {
    let end = Instant::now() + timeout;
    let mut buf = [0u8; 2048];
    while Instant::now() < end {
        let Ok(n) = sock.recv(&mut buf) else { continue };
        let Ok(msgs) = decode_packet(&buf[..n]) else { continue };
        if msgs.iter().any(|m| {
            Notification::from_message(m).is_ok_and(|n| n == Notification::Seat { id: seat.to_owned() })
        }) {
            return true;
        }
    }
    false
}

pub fn fuzzed_osc() -> Check {
    let dir = tempfile::tempdir().map_err(err)?;
    let listener = UdpSocket::bind("127.0.0.1:0").map_err(err)?;
    listener.set_read_timeout(Some(Duration::from_millis(50))).map_err(err)?;
    let (server, capture) = start_server(listener.local_addr().map_err(err)?, dir.path())?;
    let target = server.osc_addr();
    let client = UdpSocket::bind("127.0.0.1:0").map_err(err)?;
    let send = |m: OscMessage| client.send_to(&encode_message(&m).expect("valid"), target).map(drop);

    send(OscMessage::new("/ui/play", vec!["ref".into()])).map_err(err)?;
    std::thread::sleep(Duration::from_millis(300));

    let mut r = rng(909);
    let mut sent = 0;
    for i in 0..1000 {
        let d = fuzz_datagram(&mut r);
        client.send_to(&d, target).map_err(err)?;
        sent += 1;
        if i % 20 == 19 {
            std::thread::sleep(Duration::from_millis(2));
        }
    }
    std::thread::sleep(Duration::from_millis(300));

    // still answering, and the audio clock still running
    while listener.recv(&mut [0u8; 2048]).is_ok() {}
    let before = server.engine_status().blocks;
    send(OscMessage::new("/seat", vec!["E5".into()])).map_err(err)?;
    let answered = await_seat(&listener, "E5", Duration::from_secs(3));
    send(OscMessage::new("/seat", vec!["A1".into()])).map_err(err)?;
    let answered = answered && await_seat(&listener, "A1", Duration::from_secs(3));
    std::thread::sleep(Duration::from_millis(200));
    let after = server.engine_status().blocks;

    let report = server.shutdown().map_err(err)?;
    ensure!(answered, "no /state/seat reply after the fuzzing");
    ensure!(after > before, "audio blocks stopped advancing ({before} -> {after})");
    ensure!(report.engine.nonfinite == 0, "{} non-finite output samples", report.engine.nonfinite);
    ensure!(
        report.engine.discontinuities == 0,
        "{} output steps above {CLICK_THRESHOLD}",
        report.engine.discontinuities
    );

    let audio = capture.drain();
    ensure!(capture.overflow() == 0, "capture overflowed");
    ensure!(audio.iter().all(|v| v.is_finite()), "captured audio is not finite");
    let peak = audio.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    ensure!(peak > 0.2, "the tone never played (peak {peak})");
    let mut worst = 0.0f32;
    for ch in 0..2 {
        let mut prev = 0.0f32;
        for v in audio.iter().skip(ch).step_by(2) {
            worst = worst.max((v - prev).abs());
            prev = *v;
        }
    }
    ensure!(f64::from(worst) <= CLICK_THRESHOLD, "largest sample step {worst}");

    Ok(format!(
        "{sent} fuzzed datagrams ({} received, {} malformed, {} rejected); {:.1} s of audio, largest step {worst:.4}, {} deadline misses",
        report.osc_datagrams,
        report.osc_malformed,
        report.router.rejected + report.router.unknown,
        audio.len() as f64 / 2.0 / 48_000.0,
        report.engine.deadline_misses
    ))
}
