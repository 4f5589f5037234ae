//! The `serve` configuration file.
//!
//! ```toml
//! [dataset]
//! root = "data"                  # holds manifest.toml and the ARIR tree
//!
//! [decoder]
//! file = "decoder.wav"           # or: builtin = "cardioid"
//!
//! [audio]
//! output = "null"
//! block = 512
//!
//! [osc]
//! listen = "0.0.0.0:9000"
//! notify = ["127.0.0.1:9001"]
//!
//! [websocket]
//! listen = "127.0.0.1:8080"
//! web_root = "web"
//!
//! [session]
//! assessor = "p01"
//! seed = 42
//! trials = ["sample1", "sample2", "sample3"]
//! samples_dir = "samples"
//! start_seat = "C3"
//!
//! [output]
//! dir = "results"
//! ```
//!
//! Relative paths are resolved against the directory of the file.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::arir::SeatId;
use crate::osc::{DEFAULT_LISTEN_PORT, DEFAULT_NOTIFY_PORT};
use crate::session::SessionConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Read { path: PathBuf, reason: String },
    #[error("cannot parse {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub root: PathBuf,
    /// Defaults to `<root>/manifest.toml`.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinDecoder {
    /// Two virtual cardioids at +/-90 degrees.
    Cardioid,
    /// The omnidirectional channel to both ears.
    Omni,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderSection {
    #[serde(default)]
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub builtin: Option<BuiltinDecoder>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    /// Renders in real time and discards the audio.
    Null,
    /// The default sound device. Not available in this build.
    Device,
}

fn default_block() -> usize {
    crate::dsp::render::DEFAULT_BLOCK
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AudioSection {
    #[serde(default = "default_output")]
    pub output: OutputKind,
    #[serde(default = "default_block")]
    pub block: usize,
    /// Count output sample steps larger than this as clicks. Useful with
    /// test tones only; unset disables the detector.
    #[serde(default)]
    pub click_threshold: Option<f64>,
}

fn default_output() -> OutputKind {
    OutputKind::Null
}

impl Default for AudioSection {
    fn default() -> Self {
        Self {
            output: default_output(),
            block: default_block(),
            click_threshold: None,
        }
    }
}

fn default_osc_listen() -> SocketAddr {
    SocketAddr::from(([0, 0, 0, 0], DEFAULT_LISTEN_PORT))
}

fn default_notify() -> Vec<SocketAddr> {
    vec![SocketAddr::from(([127, 0, 0, 1], DEFAULT_NOTIFY_PORT))]
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OscSection {
    #[serde(default = "default_osc_listen")]
    pub listen: SocketAddr,
    #[serde(default = "default_notify")]
    pub notify: Vec<SocketAddr>,
}

impl Default for OscSection {
    fn default() -> Self {
        Self {
            listen: default_osc_listen(),
            notify: default_notify(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WebSocketSection {
    pub listen: SocketAddr,
    /// Static files served to plain HTTP requests on the same port.
    #[serde(default)]
    pub web_root: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct SessionSection {
    #[serde(flatten)]
    pub session: SessionConfig,
    /// Holds `<trial sample id>.wav`.
    pub samples_dir: PathBuf,
    #[serde(default)]
    pub start_seat: Option<SeatId>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub dataset: DatasetSection,
    #[serde(default = "default_decoder")]
    pub decoder: DecoderSection,
    #[serde(default)]
    pub audio: AudioSection,
    #[serde(default)]
    pub osc: OscSection,
    #[serde(default)]
    pub websocket: Option<WebSocketSection>,
    pub session: SessionSection,
    pub output: OutputSection,
}

fn default_decoder() -> DecoderSection {
    DecoderSection {
        file: None,
        builtin: Some(BuiltinDecoder::Cardioid),
    }
}

impl EngineConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut c: EngineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: base.to_owned(),
            reason: e.to_string(),
        })?;
        c.resolve(base);
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_owned(),
            reason: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            ConfigError::Parse { reason, .. } => ConfigError::Parse {
                path: path.to_owned(),
                reason,
            },
            other => other,
        })
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset.root);
        if let Some(m) = &mut self.dataset.manifest {
            fix(m);
        }
        if let Some(f) = &mut self.decoder.file {
            fix(f);
        }
        if let Some(ws) = &mut self.websocket {
            if let Some(w) = &mut ws.web_root {
                fix(w);
            }
        }
        fix(&mut self.session.samples_dir);
        fix(&mut self.output.dir);
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dataset
            .manifest
            .clone()
            .unwrap_or_else(|| self.dataset.root.join("manifest.toml"))
    }

    pub fn sample_path(&self, id: &str) -> PathBuf {
        self.session.samples_dir.join(format!("{id}.wav"))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        match (&self.decoder.file, &self.decoder.builtin) {
            (Some(_), Some(_)) => return bad("decoder: give either file or builtin, not both".into()),
            (None, None) => return bad("decoder: file or builtin is required".into()),
            _ => {}
        }
        if self.audio.block == 0 || !self.audio.block.is_power_of_two() || self.audio.block > 8192 {
            return bad(format!("audio.block must be a power of two up to 8192, got {}", self.audio.block));
        }
        if self.audio.click_threshold.is_some_and(|t| !(t > 0.0)) {
            return bad("audio.click_threshold must be positive".into());
        }
        if let Some(ws) = &self.websocket {
            if ws.listen.port() != 0 && ws.listen.port() == self.osc.listen.port() {
                return bad(format!("websocket and osc both listen on port {}", ws.listen.port()));
            }
        }
        if self.osc.listen.port() != 0 && self.osc.notify.iter().any(|n| *n == self.osc.listen) {
            return bad("osc.notify must not point at osc.listen".into());
        }
        self.session
            .session
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}
