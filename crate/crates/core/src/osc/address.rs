//! The closed address space spoken between clients and the engine, and its
//! JSON twin used by the WebSocket bridge. Both directions map 1:1 onto OSC
//! messages.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::codec::{OscArg, OscMessage};

pub const SEAT: &str = "/seat";
pub const HEAD_POSITION: &str = "/head/position";
pub const HEAD_ROTATION: &str = "/head/rotation";
pub const UI_PLAY: &str = "/ui/play";
pub const UI_STOP: &str = "/ui/stop";
pub const UI_RATING: &str = "/ui/rating";
pub const UI_SOURCE: &str = "/ui/source";
pub const UI_TRIAL_NEXT: &str = "/ui/trial/next";
pub const UI_INFO: &str = "/ui/info";

pub const STATE_TRIAL: &str = "/state/trial";
pub const STATE_TRANSPORT: &str = "/state/transport";
pub const STATE_SEAT: &str = "/state/seat";
pub const STATE_PHASE: &str = "/state/phase";
pub const STATE_STIMULUS: &str = "/state/stimulus";
pub const STATE_RATING: &str = "/state/rating";
pub const STATE_MISSING: &str = "/state/missing";
pub const STATE_ERROR: &str = "/state/error";

pub const CLIENT_ADDRESSES: [&str; 9] = [
    SEAT,
    HEAD_POSITION,
    HEAD_ROTATION,
    UI_PLAY,
    UI_STOP,
    UI_RATING,
    UI_SOURCE,
    UI_TRIAL_NEXT,
    UI_INFO,
];

/// Client to engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientEvent {
    Seat { id: String },
    Position { xyz: [f32; 3] },
    /// Quaternion `w, x, y, z`.
    Rotation { quaternion: [f32; 4] },
    Play { label: String },
    Stop,
    Rating { attribute: String, label: String, value: i32 },
    Source { id: String },
    TrialNext,
    Info { attribute: String },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AddressError {
    #[error("unknown address {0}")]
    UnknownAddress(String),
    #[error("{address} expects {expected}, got {found}")]
    BadArguments {
        address: String,
        expected: &'static str,
        found: String,
    },
}

fn floats<const N: usize>(args: &[OscArg]) -> Option<[f32; N]> {
    if args.len() != N {
        return None;
    }
    let mut out = [0.0; N];
    for (o, a) in out.iter_mut().zip(args) {
        *o = a.as_float()?;
    }
    Some(out)
}

fn one_str(args: &[OscArg]) -> Option<String> {
    match args {
        [OscArg::Str(s)] => Some(s.clone()),
        _ => None,
    }
}

impl ClientEvent {
    pub fn from_message(msg: &OscMessage) -> Result<Self, AddressError> {
        let a = msg.args.as_slice();
        let (parsed, expected) = match msg.address.as_str() {
            SEAT => (one_str(a).map(|id| ClientEvent::Seat { id }), ",s"),
            HEAD_POSITION => (floats::<3>(a).map(|xyz| ClientEvent::Position { xyz }), ",fff"),
            HEAD_ROTATION => (
                floats::<4>(a).map(|quaternion| ClientEvent::Rotation { quaternion }),
                ",ffff",
            ),
            UI_PLAY => (one_str(a).map(|label| ClientEvent::Play { label }), ",s"),
            UI_STOP => (a.is_empty().then_some(ClientEvent::Stop), ","),
            UI_RATING => (
                match a {
                    [OscArg::Str(attribute), OscArg::Str(label), OscArg::Int(value)] => Some(ClientEvent::Rating {
                        attribute: attribute.clone(),
                        label: label.clone(),
                        value: *value,
                    }),
                    _ => None,
                },
                ",ssi",
            ),
            UI_SOURCE => (one_str(a).map(|id| ClientEvent::Source { id }), ",s"),
            UI_TRIAL_NEXT => (a.is_empty().then_some(ClientEvent::TrialNext), ","),
            UI_INFO => (one_str(a).map(|attribute| ClientEvent::Info { attribute }), ",s"),
            other => return Err(AddressError::UnknownAddress(other.to_owned())),
        };
        parsed.ok_or_else(|| AddressError::BadArguments {
            address: msg.address.clone(),
            expected,
            found: msg.type_tags(),
        })
    }

    pub fn to_message(&self) -> OscMessage {
        let (address, args): (&str, Vec<OscArg>) = match self {
            ClientEvent::Seat { id } => (SEAT, vec![id.as_str().into()]),
            ClientEvent::Position { xyz } => (HEAD_POSITION, xyz.iter().map(|&v| v.into()).collect()),
            ClientEvent::Rotation { quaternion } => {
                (HEAD_ROTATION, quaternion.iter().map(|&v| v.into()).collect())
            }
            ClientEvent::Play { label } => (UI_PLAY, vec![label.as_str().into()]),
            ClientEvent::Stop => (UI_STOP, vec![]),
            ClientEvent::Rating {
                attribute,
                label,
                value,
            } => (
                UI_RATING,
                vec![attribute.as_str().into(), label.as_str().into(), (*value).into()],
            ),
            ClientEvent::Source { id } => (UI_SOURCE, vec![id.as_str().into()]),
            ClientEvent::TrialNext => (UI_TRIAL_NEXT, vec![]),
            ClientEvent::Info { attribute } => (UI_INFO, vec![attribute.as_str().into()]),
        };
        OscMessage::new(address, args)
    }
}

/// Engine to client. None of these carries a condition id; stimuli are
/// named by their session labels only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Notification {
    Trial { index: i32 },
    /// `playing` or `stopped`.
    Transport { state: String },
    Seat { id: String },
    /// `familiarization`, `rating` or `done`.
    Phase { phase: String },
    /// Label of the stimulus now selected.
    Stimulus { label: String },
    /// Acknowledges a stored rating.
    Rating { attribute: String, label: String, value: i32 },
    /// Cells still unrated when a trial advance was refused, as `attribute/label`.
    Missing { cells: Vec<String> },
    Error { message: String },
}

impl Notification {
    pub fn to_message(&self) -> OscMessage {
        let (address, args): (&str, Vec<OscArg>) = match self {
            Notification::Trial { index } => (STATE_TRIAL, vec![(*index).into()]),
            Notification::Transport { state } => (STATE_TRANSPORT, vec![state.as_str().into()]),
            Notification::Seat { id } => (STATE_SEAT, vec![id.as_str().into()]),
            Notification::Phase { phase } => (STATE_PHASE, vec![phase.as_str().into()]),
            Notification::Stimulus { label } => (STATE_STIMULUS, vec![label.as_str().into()]),
            Notification::Rating {
                attribute,
                label,
                value,
            } => (
                STATE_RATING,
                vec![attribute.as_str().into(), label.as_str().into(), (*value).into()],
            ),
            Notification::Missing { cells } => {
                (STATE_MISSING, cells.iter().map(|c| c.as_str().into()).collect())
            }
            Notification::Error { message } => (STATE_ERROR, vec![message.as_str().into()]),
        };
        OscMessage::new(address, args)
    }

    pub fn from_message(msg: &OscMessage) -> Result<Self, AddressError> {
        let a = msg.args.as_slice();
        let bad = |expected| AddressError::BadArguments {
            address: msg.address.clone(),
            expected,
            found: msg.type_tags(),
        };
        Ok(match msg.address.as_str() {
            STATE_TRIAL => match a {
                [OscArg::Int(index)] => Notification::Trial { index: *index },
                _ => return Err(bad(",i")),
            },
            STATE_TRANSPORT => Notification::Transport {
                state: one_str(a).ok_or_else(|| bad(",s"))?,
            },
            STATE_SEAT => Notification::Seat {
                id: one_str(a).ok_or_else(|| bad(",s"))?,
            },
            STATE_PHASE => Notification::Phase {
                phase: one_str(a).ok_or_else(|| bad(",s"))?,
            },
            STATE_STIMULUS => Notification::Stimulus {
                label: one_str(a).ok_or_else(|| bad(",s"))?,
            },
            STATE_RATING => match a {
                [OscArg::Str(attribute), OscArg::Str(label), OscArg::Int(value)] => Notification::Rating {
                    attribute: attribute.clone(),
                    label: label.clone(),
                    value: *value,
                },
                _ => return Err(bad(",ssi")),
            },
            STATE_MISSING => Notification::Missing {
                cells: a
                    .iter()
                    .map(|x| x.as_str().map(str::to_owned))
                    .collect::<Option<_>>()
                    .ok_or_else(|| bad(",s*"))?,
            },
            STATE_ERROR => Notification::Error {
                message: one_str(a).ok_or_else(|| bad(",s"))?,
            },
            other => return Err(AddressError::UnknownAddress(other.to_owned())),
        })
    }
}
