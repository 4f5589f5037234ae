//! OSC 1.0 packet encoding and decoding.
//!
//! Supported argument types are `i` (int32), `f` (float32), `s` (string)
//! and `b` (blob). Bundles are decoded recursively and flattened; their
//! time tags are ignored.

use std::fmt;

use thiserror::Error;

const BUNDLE_TAG: &[u8] = b"#bundle\0";

#[derive(Debug, Clone)]
pub enum OscArg {
    Int(i32),
    Float(f32),
    Str(String),
    Blob(Vec<u8>),
}

impl OscArg {
    pub fn type_tag(&self) -> char {
        match self {
            OscArg::Int(_) => 'i',
            OscArg::Float(_) => 'f',
            OscArg::Str(_) => 's',
            OscArg::Blob(_) => 'b',
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            OscArg::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i32> {
        match self {
            OscArg::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_float(&self) -> Option<f32> {
        match self {
            OscArg::Float(v) => Some(*v),
            _ => None,
        }
    }
}

/// Floats compare by bit pattern so NaN payloads round-trip exactly.
impl PartialEq for OscArg {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (OscArg::Int(a), OscArg::Int(b)) => a == b,
            (OscArg::Float(a), OscArg::Float(b)) => a.to_bits() == b.to_bits(),
            (OscArg::Str(a), OscArg::Str(b)) => a == b,
            (OscArg::Blob(a), OscArg::Blob(b)) => a == b,
            _ => false,
        }
    }
}

impl From<i32> for OscArg {
    fn from(v: i32) -> Self {
        OscArg::Int(v)
    }
}

impl From<f32> for OscArg {
    fn from(v: f32) -> Self {
        OscArg::Float(v)
    }
}

impl From<&str> for OscArg {
    fn from(v: &str) -> Self {
        OscArg::Str(v.to_owned())
    }
}

impl From<String> for OscArg {
    fn from(v: String) -> Self {
        OscArg::Str(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OscMessage {
    pub address: String,
    pub args: Vec<OscArg>,
}

impl OscMessage {
    pub fn new(address: impl Into<String>, args: Vec<OscArg>) -> Self {
        Self {
            address: address.into(),
            args,
        }
    }

    pub fn type_tags(&self) -> String {
        std::iter::once(',')
            .chain(self.args.iter().map(OscArg::type_tag))
            .collect()
    }
}

impl fmt::Display for OscMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.address, self.type_tags())?;
        for a in &self.args {
            match a {
                OscArg::Int(v) => write!(f, " {v}")?,
                OscArg::Float(v) => write!(f, " {v}")?,
                OscArg::Str(v) => write!(f, " {v:?}")?,
                OscArg::Blob(v) => write!(f, " <{} bytes>", v.len())?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodeError {
    #[error("invalid address {0:?}")]
    InvalidAddress(String),
    #[error("unsupported argument: {0}")]
    UnsupportedArgType(&'static str),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("packet truncated")]
    Truncated,
    #[error("non-zero padding")]
    BadPadding,
    #[error("unknown type tag {0:?}")]
    UnknownTypeTag(char),
    #[error("not an OSC packet")]
    NotOsc,
}

fn pad4(n: usize) -> usize {
    (n + 3) & !3
}

fn valid_address(a: &str) -> bool {
    a.starts_with('/') && !a.bytes().any(|b| b == 0 || b == b' ' || b == b'#' || b == b',')
}

fn push_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(s.as_bytes());
    let padded = pad4(s.len() + 1);
    out.resize(out.len() + padded - s.len(), 0);
}

pub fn encode_message(msg: &OscMessage) -> Result<Vec<u8>, EncodeError> {
    let mut out = Vec::with_capacity(64);
    encode_into(msg, &mut out)?;
    Ok(out)
}

fn encode_into(msg: &OscMessage, out: &mut Vec<u8>) -> Result<(), EncodeError> {
    if !valid_address(&msg.address) {
        return Err(EncodeError::InvalidAddress(msg.address.clone()));
    }
    push_str(out, &msg.address);
    push_str(out, &msg.type_tags());
    for arg in &msg.args {
        match arg {
            OscArg::Int(v) => out.extend_from_slice(&v.to_be_bytes()),
            OscArg::Float(v) => out.extend_from_slice(&v.to_bits().to_be_bytes()),
            OscArg::Str(s) => {
                if s.as_bytes().contains(&0) {
                    return Err(EncodeError::UnsupportedArgType("string with embedded NUL"));
                }
                push_str(out, s);
            }
            OscArg::Blob(b) => {
                let len = i32::try_from(b.len())
                    .map_err(|_| EncodeError::UnsupportedArgType("blob larger than 2^31-1 bytes"))?;
                out.extend_from_slice(&len.to_be_bytes());
                out.extend_from_slice(b);
                out.resize(out.len() + pad4(b.len()) - b.len(), 0);
            }
        }
    }
    Ok(())
}

/// Wraps messages in a bundle with the "immediately" time tag.
pub fn encode_bundle(messages: &[OscMessage]) -> Result<Vec<u8>, EncodeError> {
    let mut out = BUNDLE_TAG.to_vec();
    out.extend_from_slice(&1u64.to_be_bytes());
    for m in messages {
        let body = encode_message(m)?;
        out.extend_from_slice(&(body.len() as i32).to_be_bytes());
        out.extend_from_slice(&body);
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(n).ok_or(DecodeError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(DecodeError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn word(&mut self) -> Result<[u8; 4], DecodeError> {
        Ok(self.take(4)?.try_into().expect("4 bytes"))
    }

    fn string(&mut self) -> Result<&'a str, DecodeError> {
        let rest = &self.buf[self.pos..];
        let nul = rest.iter().position(|&b| b == 0).ok_or(DecodeError::Truncated)?;
        let total = pad4(nul + 1);
        let raw = self.take(total)?;
        if raw[nul..].iter().any(|&b| b != 0) {
            return Err(DecodeError::BadPadding);
        }
        std::str::from_utf8(&raw[..nul]).map_err(|_| DecodeError::NotOsc)
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Decodes one packet, flattening bundles into their messages in order.
pub fn decode_packet(bytes: &[u8]) -> Result<Vec<OscMessage>, DecodeError> {
    let mut out = Vec::new();
    decode_into(bytes, &mut out, 0)?;
    Ok(out)
}

/// Decodes a packet that must hold exactly one message.
pub fn decode_message(bytes: &[u8]) -> Result<OscMessage, DecodeError> {
    let mut v = decode_packet(bytes)?;
    if v.len() == 1 {
        Ok(v.pop().expect("one message"))
    } else {
        Err(DecodeError::NotOsc)
    }
}

const MAX_BUNDLE_DEPTH: usize = 8;

fn decode_into(bytes: &[u8], out: &mut Vec<OscMessage>, depth: usize) -> Result<(), DecodeError> {
    if bytes.len() % 4 != 0 {
        return Err(if bytes.is_empty() { DecodeError::Truncated } else { DecodeError::NotOsc });
    }
    match bytes.first() {
        None => Err(DecodeError::Truncated),
        Some(b'#') => {
            if depth >= MAX_BUNDLE_DEPTH || !bytes.starts_with(BUNDLE_TAG) {
                return Err(DecodeError::NotOsc);
            }
            let mut r = Reader { buf: bytes, pos: 16 };
            if bytes.len() < 16 {
                return Err(DecodeError::Truncated);
            }
            while !r.done() {
                let len = i32::from_be_bytes(r.word()?);
                if len < 0 || len % 4 != 0 {
                    return Err(DecodeError::NotOsc);
                }
                let element = r.take(len as usize)?;
                decode_into(element, out, depth + 1)?;
            }
            Ok(())
        }
        Some(b'/') => {
            out.push(decode_single(bytes)?);
            Ok(())
        }
        Some(_) => Err(DecodeError::NotOsc),
    }
}

fn decode_single(bytes: &[u8]) -> Result<OscMessage, DecodeError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let address = r.string()?;
    if !valid_address(address) {
        return Err(DecodeError::NotOsc);
    }
    if r.done() {
        return Err(DecodeError::NotOsc);
    }
    let tags = r.string()?;
    let tags = tags.strip_prefix(',').ok_or(DecodeError::NotOsc)?;
    let mut args = Vec::with_capacity(tags.len());
    for tag in tags.chars() {
        let arg = match tag {
            'i' => OscArg::Int(i32::from_be_bytes(r.word()?)),
            'f' => OscArg::Float(f32::from_bits(u32::from_be_bytes(r.word()?))),
            's' => OscArg::Str(r.string()?.to_owned()),
            'b' => {
                let len = i32::from_be_bytes(r.word()?);
                if len < 0 {
                    return Err(DecodeError::NotOsc);
                }
                let len = len as usize;
                let raw = r.take(pad4(len))?;
                if raw[len..].iter().any(|&b| b != 0) {
                    return Err(DecodeError::BadPadding);
                }
                OscArg::Blob(raw[..len].to_vec())
            }
            other => return Err(DecodeError::UnknownTypeTag(other)),
        };
        args.push(arg);
    }
    if !r.done() {
        return Err(DecodeError::NotOsc);
    }
    Ok(OscMessage {
        address: address.to_owned(),
        args,
    })
}
