use mushra::osc::{decode_packet, encode_message, ClientEvent, Notification, OscArg, OscMessage};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestError, TestRunner};
use rosc::{OscPacket, OscType};

use crate::support::{err, Check};

enum Golden {
    Client(ClientEvent),
    State(Notification),
}

impl Golden {
    fn message(&self) -> OscMessage {
        match self {
            Golden::Client(e) => e.to_message(),
            Golden::State(n) => n.to_message(),
        }
    }

    fn reparses(&self, m: &OscMessage) -> bool {
        match self {
            Golden::Client(e) => ClientEvent::from_message(m).as_ref() == Ok(e),
            Golden::State(n) => Notification::from_message(m).as_ref() == Ok(n),
        }
    }
}

fn s(v: &str) -> String {
    v.to_owned()
}

/// Hand-assembled datagrams: address, type tags and arguments, each padded
/// with NULs to a multiple of four bytes, numbers big-endian.
fn golden() -> Vec<(Golden, &'static str)> {
    use Golden::{Client, State};
    vec![
        (
            Client(ClientEvent::Seat { id: s("B3") }),
            "2f736561 74000000 2c730000 42330000",
        ),
        (
            Client(ClientEvent::Position { xyz: [1.0, 2.0, -0.5] }),
            "2f686561 642f706f 73697469 6f6e0000 2c666666 00000000 3f800000 40000000 bf000000",
        ),
        (
            Client(ClientEvent::Rotation {
                quaternion: [0.5, -0.5, 0.5, -0.5],
            }),
            "2f686561 642f726f 74617469 6f6e0000 2c666666 66000000 3f000000 bf000000 3f000000 bf000000",
        ),
        (
            Client(ClientEvent::Play { label: s("ref") }),
            "2f75692f 706c6179 00000000 2c730000 72656600",
        ),
        (Client(ClientEvent::Stop), "2f75692f 73746f70 00000000 2c000000"),
        (
            Client(ClientEvent::Rating {
                attribute: s("localizability"),
                label: s("A"),
                value: 73,
            }),
            "2f75692f 72617469 6e670000 2c737369 00000000 \
             6c6f6361 6c697a61 62696c69 74790000 41000000 00000049",
        ),
        (
            Client(ClientEvent::Source { id: s("sample2") }),
            "2f75692f 736f7572 63650000 2c730000 73616d70 6c653200",
        ),
        (
            Client(ClientEvent::TrialNext),
            "2f75692f 74726961 6c2f6e65 78740000 2c000000",
        ),
        (
            Client(ClientEvent::Info {
                attribute: s("timbral_quality"),
            }),
            "2f75692f 696e666f 00000000 2c730000 74696d62 72616c5f 7175616c 69747900",
        ),
        (
            State(Notification::Trial { index: 2 }),
            "2f737461 74652f74 7269616c 00000000 2c690000 00000002",
        ),
        (
            State(Notification::Transport { state: s("playing") }),
            "2f737461 74652f74 72616e73 706f7274 00000000 2c730000 706c6179 696e6700",
        ),
        (
            State(Notification::Seat { id: s("D4") }),
            "2f737461 74652f73 65617400 2c730000 44340000",
        ),
        (
            State(Notification::Phase { phase: s("rating") }),
            "2f737461 74652f70 68617365 00000000 2c730000 72617469 6e670000",
        ),
        (
            State(Notification::Stimulus { label: s("C") }),
            "2f737461 74652f73 74696d75 6c757300 2c730000 43000000",
        ),
        (
            State(Notification::Rating {
                attribute: s("basic_audio_quality"),
                label: s("B"),
                value: 100,
            }),
            "2f737461 74652f72 6174696e 67000000 2c737369 00000000 \
             62617369 635f6175 64696f5f 7175616c 69747900 42000000 00000064",
        ),
        (
            State(Notification::Missing {
                cells: vec![s("timbral_quality/A"), s("localizability/D")],
            }),
            "2f737461 74652f6d 69737369 6e670000 2c737300 \
             74696d62 72616c5f 7175616c 6974792f 41000000 \
             6c6f6361 6c697a61 62696c69 74792f44 00000000",
        ),
        (
            State(Notification::Error { message: s("bad seat") }),
            "2f737461 74652f65 72726f72 00000000 2c730000 62616420 73656174 00000000",
        ),
    ]
}

fn unhex(h: &str) -> Vec<u8> {
    let digits: Vec<u8> = h.bytes().filter(u8::is_ascii_hexdigit).collect();
    digits
        .chunks(2)
        .map(|p| u8::from_str_radix(std::str::from_utf8(p).expect("ascii"), 16).expect("hex digit"))
        .collect()
}

fn to_rosc(m: &OscMessage) -> rosc::OscMessage {
    rosc::OscMessage {
        addr: m.address.clone(),
        args: m
            .args
            .iter()
            .map(|a| match a {
                OscArg::Int(v) => OscType::Int(*v),
                OscArg::Float(v) => OscType::Float(*v),
                OscArg::Str(v) => OscType::String(v.clone()),
                OscArg::Blob(v) => OscType::Blob(v.clone()),
            })
            .collect(),
    }
}

fn from_rosc(bytes: &[u8]) -> Result<OscMessage, String> {
    let (_, packet) = rosc::decoder::decode_udp(bytes).map_err(|e| format!("rosc: {e:?}"))?;
    let OscPacket::Message(m) = packet else {
        return Err("rosc decoded a bundle".into());
    };
    let args = m
        .args
        .into_iter()
        .map(|a| match a {
            OscType::Int(v) => Ok(OscArg::Int(v)),
            OscType::Float(v) => Ok(OscArg::Float(v)),
            OscType::String(v) => Ok(OscArg::Str(v)),
            OscType::Blob(v) => Ok(OscArg::Blob(v)),
            other => Err(format!("unexpected rosc type {other:?}")),
        })
        .collect::<Result<_, _>>()?;
    Ok(OscMessage::new(m.addr, args))
}

fn arg() -> impl Strategy<Value = OscArg> {
    prop_oneof![
        any::<i32>().prop_map(OscArg::Int),
        any::<u32>().prop_map(|b| OscArg::Float(f32::from_bits(b))),
        "[ -~]{0,24}".prop_map(OscArg::Str),
        proptest::collection::vec(any::<u8>(), 0..40).prop_map(OscArg::Blob),
    ]
}

fn message() -> impl Strategy<Value = OscMessage> {
    ("(/[a-zA-Z0-9_.]{1,10}){1,4}", proptest::collection::vec(arg(), 0..8))
        .prop_map(|(address, args)| OscMessage::new(address, args))
}

pub fn osc_wire_format() -> Check {
    let table = golden();
    for (g, hex) in &table {
        let m = g.message();
        let want = unhex(hex);
        let ours = encode_message(&m).map_err(err)?;
        ensure!(ours == want, "{m}: encoded bytes differ from the hand-derived datagram");
        let theirs = rosc::encoder::encode(&OscPacket::Message(to_rosc(&m))).map_err(|e| format!("{e:?}"))?;
        ensure!(theirs == want, "{m}: rosc encodes it differently");
        let back = decode_packet(&want).map_err(err)?;
        ensure!(back == [m.clone()], "{m}: decode gave {back:?}");
        ensure!(g.reparses(&back[0]), "{m}: does not parse back to the same event");
        ensure!(from_rosc(&want)? == m, "{m}: rosc decodes it differently");
    }

    let mut runner = TestRunner::new(Config {
        cases: 10_000,
        failure_persistence: None,
        ..Config::default()
    });
    let outcome = runner.run(&message(), |m| {
        let bytes = encode_message(&m).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(bytes.len() % 4, 0);
        let back = decode_packet(&bytes).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(&back, &vec![m.clone()]);
        let via_rosc = from_rosc(&bytes).map_err(TestCaseError::fail)?;
        prop_assert_eq!(&via_rosc, &m);
        let rosc_bytes = rosc::encoder::encode(&OscPacket::Message(to_rosc(&m)))
            .map_err(|e| TestCaseError::fail(format!("{e:?}")))?;
        prop_assert_eq!(rosc_bytes, bytes);
        Ok(())
    });
    match outcome {
        Ok(()) => {}
        Err(TestError::Fail(why, m)) => return Err(format!("round trip failed for {m}: {why}")),
        Err(e) => return Err(e.to_string()),
    }
    Ok(format!(
        "{} golden datagrams match by hand and via rosc; 10000 random round trips",
        table.len()
    ))
}
