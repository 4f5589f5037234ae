//! Ambisonic room impulse response store.
//!
//! A dataset is a directory holding a `manifest.toml` plus one directory per
//! stored condition. Each condition directory contains one 32-bit float WAV
//! per (seat, source) pair, named `<seat_label>_src<k>.wav`, with
//! `(order + 1)^2` channels in ACN order.
//!
//! ```toml
//! room = "seminar"
//! sample_rate = 48000
//! order = 2
//! convention = "acn_sn3d"
//!
//! [[seats]]
//! label = "A1"
//! position = [1.0, -2.0, 1.2]
//!
//! [[sources]]
//! position = [4.5, -0.5, 1.5]
//!
//! [[conditions]]
//! id = "reference"
//! directory = "reference"
//! ```
//!
//! `hidden_reference` and `lowpass_anchor` are never stored: both resolve to
//! the `reference` data, the anchor adding the post-decode low-pass.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wav;

pub const GRID_ROWS: u8 = 5;
pub const GRID_COLS: u8 = 5;
pub const SEAT_COUNT: usize = (GRID_ROWS as usize) * (GRID_COLS as usize);

/// Accepted source-sample durations in seconds.
pub const SOURCE_DURATION_RANGE: (f64, f64) = (5.0, 60.0);

#[derive(Debug, Error)]
pub enum ArirError {
    #[error("missing file for {key}: {path}")]
    MissingFile { key: String, path: PathBuf },
    #[error("{file}: expected {expected} channels, found {found}")]
    ChannelCountMismatch {
        file: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("{file}: sample rate {found} Hz, expected {expected} Hz")]
    SampleRateMismatch {
        file: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("{file}: non-finite sample at index {index}")]
    NonFiniteSample { file: PathBuf, index: usize },
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("no impulse response for {0}")]
    KeyNotFound(String),
    #[error("{file}: expected a mono file, found {channels} channels")]
    NotMono { file: PathBuf, channels: usize },
    #[error("{file}: duration {seconds:.2} s outside the accepted 5-60 s range")]
    DurationOutOfRange { file: PathBuf, seconds: f64 },
    #[error("cannot read {path}: {reason}")]
    UnreadableFile { path: PathBuf, reason: String },
    #[error("cannot write {path}: {reason}")]
    WriteFailed { path: PathBuf, reason: String },
}

/// Spherical-harmonic channel normalization. Ordering is always ACN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    #[default]
    AcnSn3d,
    AcnN3d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AmbisonicConfig {
    pub order: usize,
    pub convention: Convention,
    pub sample_rate: u32,
}

impl AmbisonicConfig {
    pub fn channel_count(&self) -> usize {
        (self.order + 1) * (self.order + 1)
    }
}

/// A seat on the 5x5 grid. Rows are lettered `A`..`E`, columns numbered
/// `1`..`5`, so `B3` is row 1, column 2 (zero-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SeatId {
    row: u8,
    col: u8,
}

impl SeatId {
    pub fn new(row: u8, col: u8) -> Option<Self> {
        (row < GRID_ROWS && col < GRID_COLS).then_some(Self { row, col })
    }

    pub fn row(self) -> u8 {
        self.row
    }

    pub fn col(self) -> u8 {
        self.col
    }

    pub fn label(self) -> String {
        self.to_string()
    }

    /// All 25 seats in row-major order.
    pub fn all() -> impl Iterator<Item = SeatId> {
        (0..GRID_ROWS).flat_map(|row| (0..GRID_COLS).map(move |col| SeatId { row, col }))
    }
}

impl fmt::Display for SeatId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", (b'A' + self.row) as char, self.col + 1)
    }
}

impl FromStr for SeatId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = s.as_bytes();
        if bytes.len() != 2 {
            return Err(format!("invalid seat label {s:?}"));
        }
        let row = bytes[0].wrapping_sub(b'A');
        let col = bytes[1].wrapping_sub(b'1');
        SeatId::new(row, col).ok_or_else(|| format!("invalid seat label {s:?}"))
    }
}

impl Serialize for SeatId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SeatId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SourceId(pub usize);

impl fmt::Display for SourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "src{}", self.0)
    }
}

/// A stimulus condition.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConditionId {
    Reference,
    HiddenReference,
    NonParametric,
    LowpassAnchor,
    Parametric,
    Other(String),
}

impl ConditionId {
    pub fn as_str(&self) -> &str {
        match self {
            ConditionId::Reference => "reference",
            ConditionId::HiddenReference => "hidden_reference",
            ConditionId::NonParametric => "non_parametric",
            ConditionId::LowpassAnchor => "lowpass_anchor",
            ConditionId::Parametric => "parametric",
            ConditionId::Other(s) => s,
        }
    }

    /// The condition whose impulse responses are actually stored.
    pub fn data_condition(&self) -> ConditionId {
        match self {
            ConditionId::HiddenReference | ConditionId::LowpassAnchor => ConditionId::Reference,
            other => other.clone(),
        }
    }

    pub fn is_virtual(&self) -> bool {
        matches!(self, ConditionId::HiddenReference | ConditionId::LowpassAnchor)
    }

    pub fn uses_anchor(&self) -> bool {
        matches!(self, ConditionId::LowpassAnchor)
    }
}

impl fmt::Display for ConditionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConditionId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "reference" => ConditionId::Reference,
            "hidden_reference" => ConditionId::HiddenReference,
            "non_parametric" => ConditionId::NonParametric,
            "lowpass_anchor" => ConditionId::LowpassAnchor,
            "parametric" => ConditionId::Parametric,
            "" => return Err("empty condition id".into()),
            other if other.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') => {
                ConditionId::Other(other.to_owned())
            }
            other => return Err(format!("invalid condition id {other:?}")),
        })
    }
}

impl Serialize for ConditionId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ConditionId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Multichannel impulse response, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    channels: Vec<Vec<f64>>,
}

impl ImpulseResponse {
    /// Channels must be non-empty and of equal length.
    pub fn new(channels: Vec<Vec<f64>>) -> Self {
        assert!(!channels.is_empty(), "impulse response needs at least one channel");
        let len = channels[0].len();
        assert!(channels.iter().all(|c| c.len() == len), "ragged impulse response");
        Self { channels }
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeatEntry {
    pub label: String,
    pub position: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub position: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionEntry {
    pub id: ConditionId,
    pub directory: String,
}

/// Dataset manifest as stored in `manifest.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub room: String,
    pub sample_rate: u32,
    pub order: usize,
    #[serde(default)]
    pub convention: Convention,
    pub seats: Vec<SeatEntry>,
    pub sources: Vec<SourceEntry>,
    pub conditions: Vec<ConditionEntry>,
}

impl Manifest {
    pub fn config(&self) -> AmbisonicConfig {
        AmbisonicConfig {
            order: self.order,
            convention: self.convention,
            sample_rate: self.sample_rate,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ArirError> {
        let manifest: Manifest =
            toml::from_str(text).map_err(|e| ArirError::MalformedManifest(e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("manifest serializes")
    }

    /// Seat label to position.
    pub fn seat_positions(&self) -> BTreeMap<SeatId, [f64; 3]> {
        self.seats
            .iter()
            .filter_map(|s| s.label.parse().ok().map(|id| (id, s.position)))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ArirError> {
        let bad = |msg: String| Err(ArirError::MalformedManifest(msg));
        if self.conditions.is_empty() {
            return bad("no conditions declared".into());
        }
        if !(1..=3).contains(&self.order) {
            return bad(format!("unsupported ambisonic order {}", self.order));
        }
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        if self.seats.len() != SEAT_COUNT {
            return bad(format!("expected {SEAT_COUNT} seats, found {}", self.seats.len()));
        }
        let mut seen = HashSet::new();
        for seat in &self.seats {
            let id: SeatId = match seat.label.parse() {
                Ok(id) => id,
                Err(e) => return bad(e),
            };
            if !seen.insert(id) {
                return bad(format!("duplicate seat {}", seat.label));
            }
            if seat.position.iter().any(|v| !v.is_finite()) {
                return bad(format!("seat {} has a non-finite position", seat.label));
            }
        }
        if self.sources.is_empty() {
            return bad("no sources declared".into());
        }
        for (i, a) in self.sources.iter().enumerate() {
            if self.sources[..i].iter().any(|b| b.position == a.position) {
                return bad(format!("source {i} shares its position with another source"));
            }
        }
        let mut ids = HashSet::new();
        for cond in &self.conditions {
            if cond.id.is_virtual() {
                return bad(format!("condition {} is virtual and cannot be stored", cond.id));
            }
            if !ids.insert(cond.id.clone()) {
                return bad(format!("duplicate condition {}", cond.id));
            }
            let dir = Path::new(&cond.directory);
            if cond.directory.is_empty() || dir.is_absolute() || cond.directory.contains("..") {
                return bad(format!("condition {} has an invalid directory", cond.id));
            }
        }
        Ok(())
    }
}

/// File name of one impulse response inside its condition directory.
pub fn arir_file_name(seat: SeatId, source: SourceId) -> String {
    format!("{seat}_src{}.wav", source.0)
}

type ArirKey = (ConditionId, SeatId, SourceId);

/// All impulse responses of a dataset, immutable after load.
#[derive(Debug, Clone, PartialEq)]
pub struct ArirSet {
    config: AmbisonicConfig,
    manifest: Manifest,
    rirs: BTreeMap<ArirKey, Arc<ImpulseResponse>>,
}

impl ArirSet {
    /// Builds an in-memory set, validating it against the manifest.
    pub fn from_parts(
        manifest: Manifest,
        rirs: BTreeMap<ArirKey, ImpulseResponse>,
    ) -> Result<Self, ArirError> {
        manifest.validate()?;
        let config = manifest.config();
        let set = Self {
            config,
            rirs: rirs.into_iter().map(|(k, v)| (k, Arc::new(v))).collect(),
            manifest,
        };
        for key in set.declared_keys() {
            let ir = set.rirs.get(&key).ok_or_else(|| ArirError::MissingFile {
                key: describe_key(&key),
                path: PathBuf::from(arir_file_name(key.1, key.2)),
            })?;
            check_ir(ir, config.channel_count(), Path::new(&arir_file_name(key.1, key.2)))?;
        }
        if set.rirs.len() != set.declared_keys().count() {
            return Err(ArirError::MalformedManifest(
                "impulse responses present for undeclared keys".into(),
            ));
        }
        Ok(set)
    }

    pub fn config(&self) -> AmbisonicConfig {
        self.config
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.rirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rirs.is_empty()
    }

    pub fn source_count(&self) -> usize {
        self.manifest.sources.len()
    }

    pub fn stored_conditions(&self) -> impl Iterator<Item = &ConditionId> {
        self.manifest.conditions.iter().map(|c| &c.id)
    }

    /// True if `condition` is stored, or virtual and backed by stored reference data.
    pub fn has_condition(&self, condition: &ConditionId) -> bool {
        let data = condition.data_condition();
        self.stored_conditions().any(|c| *c == data)
    }

    pub fn seats(&self) -> impl Iterator<Item = SeatId> + '_ {
        self.manifest.seats.iter().filter_map(|s| s.label.parse().ok())
    }

    /// Longest impulse response in samples.
    pub fn max_len(&self) -> usize {
        self.rirs.values().map(|ir| ir.len()).max().unwrap_or(0)
    }

    fn declared_keys(&self) -> impl Iterator<Item = ArirKey> + '_ {
        self.manifest.conditions.iter().flat_map(move |cond| {
            self.manifest.seats.iter().flat_map(move |seat| {
                let seat: SeatId = seat.label.parse().expect("validated");
                (0..self.manifest.sources.len()).map(move |k| (cond.id.clone(), seat, SourceId(k)))
            })
        })
    }

    /// Looks up the stored response; virtual conditions resolve to the reference.
    pub fn get_arir(
        &self,
        condition: &ConditionId,
        seat: SeatId,
        source: SourceId,
    ) -> Result<&Arc<ImpulseResponse>, ArirError> {
        let key = (condition.data_condition(), seat, source);
        self.rirs
            .get(&key)
            .ok_or_else(|| ArirError::KeyNotFound(describe_key(&(condition.clone(), seat, source))))
    }

    /// Writes the set in the on-disk layout under `root` (manifest included).
    pub fn write_to(&self, root: &Path) -> Result<PathBuf, ArirError> {
        let write_err = |path: &Path, e: &dyn fmt::Display| ArirError::WriteFailed {
            path: path.to_owned(),
            reason: e.to_string(),
        };
        std::fs::create_dir_all(root).map_err(|e| write_err(root, &e))?;
        for cond in &self.manifest.conditions {
            let dir = root.join(&cond.directory);
            std::fs::create_dir_all(&dir).map_err(|e| write_err(&dir, &e))?;
        }
        for ((cond, seat, src), ir) in &self.rirs {
            let entry = self
                .manifest
                .conditions
                .iter()
                .find(|c| c.id == *cond)
                .expect("validated");
            let path = root.join(&entry.directory).join(arir_file_name(*seat, *src));
            wav::write_wav(&path, self.config.sample_rate, ir.channels())
                .map_err(|e| write_err(&path, &e))?;
        }
        let manifest_path = root.join("manifest.toml");
        std::fs::write(&manifest_path, self.manifest.to_toml())
            .map_err(|e| write_err(&manifest_path, &e))?;
        Ok(manifest_path)
    }
}

fn describe_key((cond, seat, src): &ArirKey) -> String {
    format!("({cond}, {seat}, {src})")
}

fn check_ir(ir: &ImpulseResponse, expected_channels: usize, file: &Path) -> Result<(), ArirError> {
    if ir.channel_count() != expected_channels {
        return Err(ArirError::ChannelCountMismatch {
            file: file.to_owned(),
            expected: expected_channels,
            found: ir.channel_count(),
        });
    }
    if ir.is_empty() {
        return Err(ArirError::UnreadableFile {
            path: file.to_owned(),
            reason: "empty impulse response".into(),
        });
    }
    check_finite(ir.channels(), file)
}

fn check_finite(channels: &[Vec<f64>], file: &Path) -> Result<(), ArirError> {
    let frames = channels.first().map_or(0, Vec::len);
    for i in 0..frames {
        if channels.iter().any(|c| !c[i].is_finite()) {
            return Err(ArirError::NonFiniteSample {
                file: file.to_owned(),
                index: i,
            });
        }
    }
    Ok(())
}

/// Loads every impulse response declared by the manifest.
///
/// Condition directories are resolved relative to `root`. Sample rates must
/// match the manifest exactly; nothing is resampled.
pub fn load_arir_set(root: &Path, manifest_path: &Path) -> Result<ArirSet, ArirError> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| ArirError::UnreadableFile {
        path: manifest_path.to_owned(),
        reason: e.to_string(),
    })?;
    let manifest = Manifest::from_toml(&text)?;
    let config = manifest.config();
    let mut rirs = BTreeMap::new();
    for cond in &manifest.conditions {
        let dir = root.join(&cond.directory);
        for seat in &manifest.seats {
            let seat_id: SeatId = seat.label.parse().expect("validated");
            for k in 0..manifest.sources.len() {
                let key = (cond.id.clone(), seat_id, SourceId(k));
                let path = dir.join(arir_file_name(seat_id, SourceId(k)));
                if !path.is_file() {
                    return Err(ArirError::MissingFile {
                        key: describe_key(&key),
                        path,
                    });
                }
                let data = wav::read_wav(&path).map_err(|e| ArirError::UnreadableFile {
                    path: path.clone(),
                    reason: e.to_string(),
                })?;
                if data.sample_rate != config.sample_rate {
                    return Err(ArirError::SampleRateMismatch {
                        file: path,
                        expected: config.sample_rate,
                        found: data.sample_rate,
                    });
                }
                if data.channels.len() != config.channel_count() {
                    return Err(ArirError::ChannelCountMismatch {
                        file: path,
                        expected: config.channel_count(),
                        found: data.channels.len(),
                    });
                }
                if data.frames() == 0 {
                    return Err(ArirError::UnreadableFile {
                        path,
                        reason: "empty impulse response".into(),
                    });
                }
                check_finite(&data.channels, &path)?;
                rirs.insert(key, ImpulseResponse::new(data.channels));
            }
        }
    }
    ArirSet::from_parts(manifest, rirs)
}

/// A mono anechoic source signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSample {
    pub id: String,
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl SourceSample {
    pub fn new(id: impl Into<String>, samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            id: id.into(),
            samples,
            sample_rate,
        }
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// Loads a mono WAV; its id is the file stem.
pub fn load_source_sample(path: &Path, expected_rate: u32) -> Result<SourceSample, ArirError> {
    let data = wav::read_wav(path).map_err(|e| ArirError::UnreadableFile {
        path: path.to_owned(),
        reason: e.to_string(),
    })?;
    if data.channels.len() != 1 {
        return Err(ArirError::NotMono {
            file: path.to_owned(),
            channels: data.channels.len(),
        });
    }
    if data.sample_rate != expected_rate {
        return Err(ArirError::SampleRateMismatch {
            file: path.to_owned(),
            expected: expected_rate,
            found: data.sample_rate,
        });
    }
    check_finite(&data.channels, path)?;
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_owned();
    let sample = SourceSample::new(id, data.channels.into_iter().next().unwrap(), expected_rate);
    let seconds = sample.duration();
    if seconds < SOURCE_DURATION_RANGE.0 || seconds > SOURCE_DURATION_RANGE.1 {
        return Err(ArirError::DurationOutOfRange {
            file: path.to_owned(),
            seconds,
        });
    }
    Ok(sample)
}
