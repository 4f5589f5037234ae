//! MUSHRA session state machine.
//!
//! A session starts in free-play familiarization over the stimuli of the
//! first trial, then walks through the trials one by one. Each trial has
//! its own random label map (`A`, `B`, ... -> condition); the explicit
//! reference is always `ref` and is never rated. The map leaves the process
//! only when the session is finalized.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arir::ConditionId;

pub const REFERENCE_LABEL: &str = "ref";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    BasicAudioQuality,
    Localizability,
    SpatialQuality,
    TimbralQuality,
}

impl Attribute {
    pub const ALL: [Attribute; 4] = [
        Attribute::BasicAudioQuality,
        Attribute::Localizability,
        Attribute::SpatialQuality,
        Attribute::TimbralQuality,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Attribute::BasicAudioQuality => "basic_audio_quality",
            Attribute::Localizability => "localizability",
            Attribute::SpatialQuality => "spatial_quality",
            Attribute::TimbralQuality => "timbral_quality",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Attribute::BasicAudioQuality => "Basic Audio Quality",
            Attribute::Localizability => "Localizability",
            Attribute::SpatialQuality => "Spatial Quality",
            Attribute::TimbralQuality => "Timbral Quality",
        }
    }

    /// Slider end labels (low, high).
    pub fn endpoint_labels(self) -> (&'static str, &'static str) {
        match self {
            Attribute::BasicAudioQuality => ("0", "100"),
            Attribute::Localizability => ("More difficult", "Easier"),
            Attribute::SpatialQuality | Attribute::TimbralQuality => ("Low Quality", "High Quality"),
        }
    }

    /// Text shown by the info button.
    pub fn description(self) -> &'static str {
        match self {
            Attribute::BasicAudioQuality => {
                "Overall impression. Rate every difference you hear compared with the reference, whatever its nature."
            }
            Attribute::Localizability => {
                "How easily can you tell where the sound comes from and how wide it is? Low values: position and width are hard to judge."
            }
            Attribute::SpatialQuality => {
                "How convincingly does the sound place you in the room? Consider envelopment, distance and the sense of the space around you."
            }
            Attribute::TimbralQuality => {
                "Tone color. Does the stimulus keep the harmonic balance of the reference, or does it sound duller, brighter or colored?"
            }
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Attribute {
    type Err = SessionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Attribute::ALL
            .into_iter()
            .find(|a| a.id() == s)
            .ok_or_else(|| SessionError::UnknownAttribute(s.to_owned()))
    }
}

fn default_trials() -> Vec<String> {
    vec!["sample1".into(), "sample2".into(), "sample3".into()]
}

fn default_conditions() -> Vec<ConditionId> {
    vec![
        ConditionId::HiddenReference,
        ConditionId::NonParametric,
        ConditionId::LowpassAnchor,
        ConditionId::Parametric,
    ]
}

fn default_threshold() -> u8 {
    90
}

fn default_fraction() -> f64 {
    0.15
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    #[serde(rename = "assessor")]
    pub assessor_id: String,
    /// Defaults to `s<seed>`.
    #[serde(default)]
    pub session_id: Option<String>,
    /// Source-sample id per trial.
    #[serde(default = "default_trials")]
    pub trials: Vec<String>,
    #[serde(rename = "conditions", default = "default_conditions")]
    pub conditions_under_test: Vec<ConditionId>,
    #[serde(rename = "seed", default)]
    pub rng_seed: u64,
    #[serde(default = "default_threshold")]
    pub rating_threshold: u8,
    #[serde(default = "default_fraction")]
    pub exclusion_fraction: f64,
}

impl SessionConfig {
    pub fn new(assessor_id: impl Into<String>, rng_seed: u64) -> Self {
        Self {
            assessor_id: assessor_id.into(),
            session_id: None,
            trials: default_trials(),
            conditions_under_test: default_conditions(),
            rng_seed,
            rating_threshold: default_threshold(),
            exclusion_fraction: default_fraction(),
        }
    }

    pub fn session_id(&self) -> String {
        self.session_id
            .clone()
            .unwrap_or_else(|| format!("s{}", self.rng_seed))
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        let bad = |m: &str| Err(SessionError::InvalidConfig(m.to_owned()));
        let ok_id = |s: &str| {
            !s.is_empty()
                && s.chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
        };
        if !ok_id(&self.assessor_id) {
            return bad("assessor id must be non-empty [A-Za-z0-9._-]");
        }
        if !ok_id(&self.session_id()) {
            return bad("session id must be non-empty [A-Za-z0-9._-]");
        }
        if self.trials.is_empty() {
            return bad("at least one trial is required");
        }
        let hidden = self
            .conditions_under_test
            .iter()
            .filter(|c| **c == ConditionId::HiddenReference)
            .count();
        if hidden != 1 {
            return bad("conditions must include hidden_reference exactly once");
        }
        if self.conditions_under_test.len() < 2 {
            return bad("at least two conditions are required");
        }
        if self.conditions_under_test.len() > 26 {
            return bad("at most 26 conditions are supported");
        }
        if self.conditions_under_test.contains(&ConditionId::Reference) {
            return bad("the explicit reference is always present and cannot be a condition under test");
        }
        let mut seen = self.conditions_under_test.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.conditions_under_test.len() {
            return bad("conditions must be distinct");
        }
        if self.rating_threshold > 100 {
            return bad("rating threshold must be within 0..=100");
        }
        if !(0.0..=1.0).contains(&self.exclusion_fraction) {
            return bad("exclusion fraction must be within 0..=1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Familiarization,
    Rating,
    Done,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Familiarization => "familiarization",
            Phase::Rating => "rating",
            Phase::Done => "done",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rating {
    pub value: u8,
    pub unix_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialState {
    pub index: usize,
    pub sample_id: String,
    pub label_map: BTreeMap<String, ConditionId>,
    pub ratings: BTreeMap<(Attribute, String), Rating>,
    pub started_ms: Option<u64>,
    pub completed_ms: Option<u64>,
}

impl TrialState {
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.label_map.keys().map(String::as_str)
    }

    /// Cells still without a rating, in (attribute, label) order.
    pub fn missing(&self) -> Vec<(Attribute, String)> {
        Attribute::ALL
            .into_iter()
            .flat_map(|a| self.label_map.keys().map(move |l| (a, l.clone())))
            .filter(|k| !self.ratings.contains_key(k))
            .collect()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SessionError {
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("rating {0} outside 0..=100")]
    OutOfRange(i64),
    #[error("not allowed during {0}")]
    WrongPhase(&'static str),
    #[error("trial incomplete, missing {}", format_missing(.0))]
    Incomplete(Vec<(Attribute, String)>),
    #[error("session is not finished")]
    NotFinished,
    #[error("could not write {path}: {reason}")]
    PersistFailure { path: PathBuf, reason: String },
}

fn format_missing(cells: &[(Attribute, String)]) -> String {
    cells
        .iter()
        .map(|(a, l)| format!("{a}/{l}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// What `complete_trial` led to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Advance {
    Trial(usize),
    Finished,
}

/// One row of the results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub assessor: String,
    pub trial: usize,
    pub attribute: Attribute,
    pub condition: ConditionId,
    pub label: String,
    pub value: u8,
    pub unix_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub sample: String,
    pub labels: BTreeMap<String, ConditionId>,
    pub started_unix_ms: Option<u64>,
    pub completed_unix_ms: Option<u64>,
}

/// Sidecar metadata written next to the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub assessor: String,
    pub session: String,
    pub seed: u64,
    pub aborted: bool,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub familiarization_ms: u64,
    pub trial_ms: Vec<u64>,
    pub trials: Vec<TrialRecord>,
    pub telemetry: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionResult {
    pub rows: Vec<ResultRow>,
    pub meta: SessionMeta,
    pub csv_path: PathBuf,
    pub meta_path: PathBuf,
}

pub fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

pub fn results_file_name(assessor: &str, session: &str, aborted: bool) -> String {
    let suffix = if aborted { "_aborted" } else { "" };
    format!("results_{assessor}_{session}{suffix}.csv")
}

fn label_for(i: usize) -> String {
    char::from(b'A' + i as u8).to_string()
}

pub struct Session {
    config: SessionConfig,
    trials: Vec<TrialState>,
    phase: Phase,
    current: usize,
    started_ms: u64,
    last_ms: u64,
    rating_started_ms: Option<u64>,
    finished_ms: Option<u64>,
    telemetry: Option<String>,
}

/// Starts a session at the current wall-clock time.
pub fn create_session(config: SessionConfig) -> Result<Session, SessionError> {
    Session::new(config, unix_ms())
}

impl Session {
    pub fn new(config: SessionConfig, start_unix_ms: u64) -> Result<Self, SessionError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let trials = config
            .trials
            .iter()
            .enumerate()
            .map(|(index, sample)| {
                let mut conds = config.conditions_under_test.clone();
                conds.shuffle(&mut rng);
                TrialState {
                    index,
                    sample_id: sample.clone(),
                    label_map: conds
                        .into_iter()
                        .enumerate()
                        .map(|(i, c)| (label_for(i), c))
                        .collect(),
                    ratings: BTreeMap::new(),
                    started_ms: None,
                    completed_ms: None,
                }
            })
            .collect();
        Ok(Self {
            config,
            trials,
            phase: Phase::Familiarization,
            current: 0,
            started_ms: start_unix_ms,
            last_ms: start_unix_ms,
            rating_started_ms: None,
            finished_ms: None,
            telemetry: None,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn started_ms(&self) -> u64 {
        self.started_ms
    }

    pub fn trial_count(&self) -> usize {
        self.trials.len()
    }

    /// Index of the trial being rated, or of the trial whose stimuli are
    /// playable (trial 0 during familiarization).
    pub fn current_index(&self) -> usize {
        self.current
    }

    pub fn current_trial(&self) -> &TrialState {
        &self.trials[self.current.min(self.trials.len() - 1)]
    }

    pub fn trials(&self) -> &[TrialState] {
        &self.trials
    }

    /// Labels a client may play right now: `ref` plus the trial's labels.
    pub fn playable_labels(&self) -> Vec<String> {
        if self.phase == Phase::Done {
            return Vec::new();
        }
        std::iter::once(REFERENCE_LABEL.to_owned())
            .chain(self.current_trial().labels().map(str::to_owned))
            .collect()
    }

    pub fn set_telemetry_file(&mut self, name: impl Into<String>) {
        self.telemetry = Some(name.into());
    }

    fn tick(&mut self, now: u64) -> u64 {
        self.last_ms = self.last_ms.max(now);
        self.last_ms
    }

    /// Condition behind a playable label.
    pub fn resolve_label(&self, label: &str) -> Result<ConditionId, SessionError> {
        if self.phase == Phase::Done {
            return Err(SessionError::WrongPhase(Phase::Done.as_str()));
        }
        if label == REFERENCE_LABEL {
            return Ok(ConditionId::Reference);
        }
        self.current_trial()
            .label_map
            .get(label)
            .cloned()
            .ok_or_else(|| SessionError::UnknownLabel(label.to_owned()))
    }

    /// Leaves familiarization and opens trial 0 for rating.
    pub fn begin_rating(&mut self, now: u64) -> Result<(), SessionError> {
        if self.phase != Phase::Familiarization {
            return Err(SessionError::WrongPhase(self.phase.as_str()));
        }
        let now = self.tick(now);
        self.phase = Phase::Rating;
        self.current = 0;
        self.rating_started_ms = Some(now);
        self.trials[0].started_ms = Some(now);
        Ok(())
    }

    pub fn submit_rating(
        &mut self,
        attribute: Attribute,
        label: &str,
        value: i64,
        now: u64,
    ) -> Result<(), SessionError> {
        if self.phase != Phase::Rating {
            return Err(SessionError::WrongPhase(self.phase.as_str()));
        }
        if !self.trials[self.current].label_map.contains_key(label) {
            return Err(SessionError::UnknownLabel(label.to_owned()));
        }
        if !(0..=100).contains(&value) {
            return Err(SessionError::OutOfRange(value));
        }
        let unix_ms = self.tick(now);
        self.trials[self.current].ratings.insert(
            (attribute, label.to_owned()),
            Rating {
                value: value as u8,
                unix_ms,
            },
        );
        Ok(())
    }

    pub fn complete_trial(&mut self, now: u64) -> Result<Advance, SessionError> {
        if self.phase != Phase::Rating {
            return Err(SessionError::WrongPhase(self.phase.as_str()));
        }
        let missing = self.trials[self.current].missing();
        if !missing.is_empty() {
            return Err(SessionError::Incomplete(missing));
        }
        let now = self.tick(now);
        self.trials[self.current].completed_ms = Some(now);
        if self.current + 1 < self.trials.len() {
            self.current += 1;
            self.trials[self.current].started_ms = Some(now);
            Ok(Advance::Trial(self.current))
        } else {
            self.phase = Phase::Done;
            Ok(Advance::Finished)
        }
    }

    /// The administrator's "next" action: starts rating after
    /// familiarization, otherwise completes the current trial.
    pub fn advance(&mut self, now: u64) -> Result<Advance, SessionError> {
        match self.phase {
            Phase::Familiarization => self.begin_rating(now).map(|_| Advance::Trial(0)),
            Phase::Rating => self.complete_trial(now),
            Phase::Done => Err(SessionError::WrongPhase(Phase::Done.as_str())),
        }
    }

    /// Unblinded rows of all trials rated so far, by trial then time.
    pub fn result_rows(&self) -> Vec<ResultRow> {
        let mut rows: Vec<ResultRow> = self
            .trials
            .iter()
            .flat_map(|t| {
                t.ratings.iter().map(move |((attribute, label), r)| ResultRow {
                    assessor: self.config.assessor_id.clone(),
                    trial: t.index,
                    attribute: *attribute,
                    condition: t.label_map[label].clone(),
                    label: label.clone(),
                    value: r.value,
                    unix_ms: r.unix_ms,
                })
            })
            .collect();
        rows.sort_by(|a, b| {
            (a.trial, a.unix_ms, a.attribute, &a.label).cmp(&(b.trial, b.unix_ms, b.attribute, &b.label))
        });
        rows
    }

    fn meta(&self, finished: u64, aborted: bool) -> SessionMeta {
        let rating_start = self.rating_started_ms.unwrap_or(finished);
        SessionMeta {
            assessor: self.config.assessor_id.clone(),
            session: self.config.session_id(),
            seed: self.config.rng_seed,
            aborted,
            started_unix_ms: self.started_ms,
            finished_unix_ms: finished,
            familiarization_ms: rating_start.saturating_sub(self.started_ms),
            trial_ms: self
                .trials
                .iter()
                .filter_map(|t| Some(t.completed_ms.unwrap_or(finished) - t.started_ms?))
                .collect(),
            trials: self
                .trials
                .iter()
                .map(|t| TrialRecord {
                    index: t.index,
                    sample: t.sample_id.clone(),
                    labels: t.label_map.clone(),
                    started_unix_ms: t.started_ms,
                    completed_unix_ms: t.completed_ms,
                })
                .collect(),
            telemetry: self.telemetry.clone(),
        }
    }

    /// Writes the unblinded results and metadata into `dir`. Calling it
    /// again rewrites the same content.
    pub fn finalize_session(&mut self, dir: &Path, now: u64) -> Result<SessionResult, SessionError> {
        if self.phase != Phase::Done {
            return Err(SessionError::NotFinished);
        }
        let finished = match self.finished_ms {
            Some(t) => t,
            None => {
                let t = self.tick(now);
                self.finished_ms = Some(t);
                t
            }
        };
        self.persist(dir, finished, false)
    }

    /// Writes whatever has been rated under an `_aborted` file name.
    pub fn abort(&mut self, dir: &Path, now: u64) -> Result<SessionResult, SessionError> {
        let finished = self.tick(now);
        self.persist(dir, finished, true)
    }

    fn persist(&self, dir: &Path, finished: u64, aborted: bool) -> Result<SessionResult, SessionError> {
        let rows = self.result_rows();
        let meta = self.meta(finished, aborted);
        let session = self.config.session_id();
        let csv_name = results_file_name(&self.config.assessor_id, &session, aborted);
        let csv_path = dir.join(&csv_name);
        let meta_path = csv_path.with_extension("meta.json");

        let mut writer = csv::Writer::from_writer(Vec::new());
        for row in &rows {
            writer.serialize(row).map_err(|e| persist_err(&csv_path, e))?;
        }
        let csv_bytes = writer.into_inner().map_err(|e| persist_err(&csv_path, e))?;
        let csv_bytes = if rows.is_empty() {
            b"assessor,trial,attribute,condition,label,value,unix_ms\n".to_vec()
        } else {
            csv_bytes
        };
        let meta_bytes = serde_json::to_vec_pretty(&meta).map_err(|e| persist_err(&meta_path, e))?;
        fs::create_dir_all(dir).map_err(|e| persist_err(dir, e))?;
        write_atomic(&csv_path, &csv_bytes)?;
        write_atomic(&meta_path, &meta_bytes)?;
        Ok(SessionResult {
            rows,
            meta,
            csv_path,
            meta_path,
        })
    }
}

fn persist_err(path: &Path, e: impl fmt::Display) -> SessionError {
    SessionError::PersistFailure {
        path: path.to_owned(),
        reason: e.to_string(),
    }
}

/// Write to a sibling temp file, sync, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), SessionError> {
    let tmp = path.with_extension("tmp");
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        persist_err(path, e)
    })
}

/// Reads a results CSV written by [`Session::finalize_session`].
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>, csv::Error> {
    csv::Reader::from_path(path)?.deserialize().collect()
}
