//! Turns client events into session, engine and telemetry effects.

use std::path::Path;

use log::{debug, info, warn};
use serde::Serialize;

use crate::arir::SeatId;
use crate::dsp::Orientation;
use crate::engine::EngineControl;
use crate::osc::{ClientEvent, Notification, OscMessage};
use crate::session::{Advance, Attribute, Phase, Session, SessionError, SessionResult};
use crate::telemetry::{SessionState, TelemetryEvent, TelemetrySender, UiKind};

/// Everything a freshly connected client needs to draw itself. Carries
/// labels only, never conditions.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename = "snapshot")]
pub struct Snapshot {
    pub phase: String,
    pub trial: usize,
    pub trials: usize,
    pub labels: Vec<String>,
    pub attributes: Vec<AttributeInfo>,
    pub seat: Option<String>,
    pub transport: String,
    pub stimulus: Option<String>,
    pub ratings: Vec<RatingCell>,
    pub samples: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeInfo {
    pub id: String,
    pub title: String,
    pub low: String,
    pub high: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatingCell {
    pub attribute: String,
    pub label: String,
    pub value: u8,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RouterStats {
    pub handled: u64,
    pub unknown: u64,
    pub rejected: u64,
}

pub struct Router<E> {
    session: Session,
    engine: E,
    telemetry: Option<TelemetrySender>,
    seat: Option<SeatId>,
    position: [f64; 3],
    stimulus: Option<String>,
    sample: Option<String>,
    samples: Vec<String>,
    stats: RouterStats,
}

fn transport(playing: bool) -> Notification {
    Notification::Transport {
        state: if playing { "playing" } else { "stopped" }.into(),
    }
}

impl<E: EngineControl> Router<E> {
    /// Logs the session start, loads the first trial's sample and, if given,
    /// places the listener at `start_seat` (a teleport from nowhere at t=0).
    pub fn new(
        session: Session,
        engine: E,
        telemetry: Option<TelemetrySender>,
        start_seat: Option<SeatId>,
        samples: Vec<String>,
    ) -> Self {
        let mut r = Self {
            session,
            engine,
            telemetry,
            seat: None,
            position: [0.0; 3],
            stimulus: None,
            sample: None,
            samples,
            stats: RouterStats::default(),
        };
        let start = r.session.started_ms();
        r.log(TelemetryEvent::Session {
            t: 0,
            state: SessionState::Start,
            assessor: r.session.config().assessor_id.clone(),
            session: r.session.config().session_id(),
        });
        r.load_trial_sample();
        if let Some(seat) = start_seat {
            r.handle(ClientEvent::Seat { id: seat.label() }, start);
        }
        r
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn engine(&self) -> &E {
        &self.engine
    }

    pub fn engine_mut(&mut self) -> &mut E {
        &mut self.engine
    }

    pub fn seat(&self) -> Option<SeatId> {
        self.seat
    }

    pub fn stats(&self) -> RouterStats {
        self.stats
    }

    pub fn is_finished(&self) -> bool {
        self.session.phase() == Phase::Done
    }

    fn rel(&self, now_ms: u64) -> u64 {
        now_ms.saturating_sub(self.session.started_ms())
    }

    fn log(&self, event: TelemetryEvent) {
        if let Some(t) = &self.telemetry {
            t.record(event);
        }
    }

    fn ui(&self, now_ms: u64, kind: UiKind, payload: impl Into<String>) {
        self.log(TelemetryEvent::Ui {
            t: self.rel(now_ms),
            kind,
            payload: payload.into(),
        });
    }

    fn load_trial_sample(&mut self) {
        if self.session.phase() == Phase::Done {
            return;
        }
        let id = self.session.current_trial().sample_id.clone();
        if self.sample.as_deref() == Some(id.as_str()) {
            return;
        }
        match self.engine.select_sample(&id) {
            Ok(()) => self.sample = Some(id),
            Err(e) => warn!("cannot load sample {id}: {e}"),
        }
    }

    /// Decodes and handles one OSC message.
    pub fn route(&mut self, msg: &OscMessage, now_ms: u64) -> Vec<Notification> {
        match ClientEvent::from_message(msg) {
            Ok(ev) => self.handle(ev, now_ms),
            Err(e) => {
                self.stats.unknown += 1;
                debug!("ignoring {msg}: {e}");
                Vec::new()
            }
        }
    }

    pub fn handle(&mut self, event: ClientEvent, now_ms: u64) -> Vec<Notification> {
        self.stats.handled += 1;
        let out = self.dispatch(event, now_ms);
        if matches!(out.last(), Some(Notification::Error { .. })) {
            self.stats.rejected += 1;
        }
        out
    }

    fn dispatch(&mut self, event: ClientEvent, now_ms: u64) -> Vec<Notification> {
        let err = |message: String| vec![Notification::Error { message }];
        match event {
            ClientEvent::Seat { id } => {
                let seat: SeatId = match id.parse() {
                    Ok(s) => s,
                    Err(_) => return err(format!("unknown seat {id:?}")),
                };
                if let Err(e) = self.engine.select_seat(seat) {
                    return err(e.to_string());
                }
                self.log(TelemetryEvent::Teleport {
                    t: self.rel(now_ms),
                    from: self.seat,
                    to: seat,
                });
                self.seat = Some(seat);
                vec![Notification::Seat { id: seat.label() }]
            }
            ClientEvent::Position { xyz } => {
                self.position = xyz.map(f64::from);
                Vec::new()
            }
            ClientEvent::Rotation { quaternion: [w, x, y, z] } => {
                let Some(o) = Orientation::from_quaternion(w.into(), x.into(), y.into(), z.into()) else {
                    return err("degenerate quaternion".into());
                };
                self.engine.set_orientation(o);
                self.log(TelemetryEvent::Pose {
                    t: self.rel(now_ms),
                    position: self.position,
                    orientation: o.components(),
                });
                Vec::new()
            }
            ClientEvent::Play { label } => {
                let condition = match self.session.resolve_label(&label) {
                    Ok(c) => c,
                    Err(e) => return err(e.to_string()),
                };
                if let Err(e) = self.engine.switch_condition(condition) {
                    return err(e.to_string());
                }
                let was_playing = self.engine.is_playing();
                if !was_playing {
                    if let Err(e) = self.engine.play() {
                        return err(e.to_string());
                    }
                }
                self.ui(now_ms, UiKind::Play, label.as_str());
                self.stimulus = Some(label.clone());
                let mut out = vec![Notification::Stimulus { label }];
                if !was_playing {
                    out.push(transport(true));
                }
                out
            }
            ClientEvent::Stop => {
                if let Err(e) = self.engine.stop() {
                    return err(e.to_string());
                }
                self.ui(now_ms, UiKind::Stop, "");
                vec![transport(false)]
            }
            ClientEvent::Rating {
                attribute,
                label,
                value,
            } => {
                let attr: Attribute = match attribute.parse() {
                    Ok(a) => a,
                    Err(_) => return err(SessionError::UnknownAttribute(attribute).to_string()),
                };
                match self.session.submit_rating(attr, &label, value.into(), now_ms) {
                    Ok(()) => {
                        self.ui(now_ms, UiKind::Rating, format!("{attribute},{label},{value}"));
                        vec![Notification::Rating {
                            attribute,
                            label,
                            value,
                        }]
                    }
                    Err(e) => {
                        info!("rating {attribute}/{label}={value} ignored: {e}");
                        err(e.to_string())
                    }
                }
            }
            ClientEvent::Source { id } => {
                if let Err(e) = self.engine.select_sample(&id) {
                    return err(e.to_string());
                }
                self.sample = Some(id.clone());
                self.ui(now_ms, UiKind::SourceSelect, id);
                Vec::new()
            }
            ClientEvent::TrialNext => match self.session.advance(now_ms) {
                Ok(step) => {
                    let mut out = Vec::new();
                    if self.engine.is_playing() && self.engine.stop().is_ok() {
                        out.push(transport(false));
                    }
                    self.stimulus = None;
                    let payload = match step {
                        Advance::Trial(i) => {
                            self.load_trial_sample();
                            out.push(Notification::Trial { index: i as i32 });
                            i.to_string()
                        }
                        Advance::Finished => "done".to_owned(),
                    };
                    out.push(Notification::Phase {
                        phase: self.session.phase().as_str().into(),
                    });
                    self.ui(now_ms, UiKind::TrialAdvance, payload);
                    out
                }
                Err(SessionError::Incomplete(cells)) => vec![Notification::Missing {
                    cells: cells.iter().map(|(a, l)| format!("{a}/{l}")).collect(),
                }],
                Err(e) => err(e.to_string()),
            },
            ClientEvent::Info { attribute } => {
                self.ui(now_ms, UiKind::Info, attribute);
                Vec::new()
            }
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        let s = &self.session;
        let ratings = if s.phase() == Phase::Rating {
            s.current_trial()
                .ratings
                .iter()
                .map(|((a, l), r)| RatingCell {
                    attribute: a.id().into(),
                    label: l.clone(),
                    value: r.value,
                })
                .collect()
        } else {
            Vec::new()
        };
        Snapshot {
            phase: s.phase().as_str().into(),
            trial: s.current_index(),
            trials: s.trial_count(),
            labels: s.playable_labels(),
            attributes: Attribute::ALL
                .iter()
                .map(|a| {
                    let (low, high) = a.endpoint_labels();
                    AttributeInfo {
                        id: a.id().into(),
                        title: a.title().into(),
                        low: low.into(),
                        high: high.into(),
                        description: a.description().into(),
                    }
                })
                .collect(),
            seat: self.seat.map(|s| s.label()),
            transport: if self.engine.is_playing() { "playing" } else { "stopped" }.into(),
            stimulus: self.stimulus.clone(),
            ratings,
            samples: self.samples.clone(),
        }
    }

    fn log_end(&self, now_ms: u64, state: SessionState) {
        self.log(TelemetryEvent::Session {
            t: self.rel(now_ms),
            state,
            assessor: self.session.config().assessor_id.clone(),
            session: self.session.config().session_id(),
        });
    }

    /// Writes the results of a finished session.
    pub fn finish(&mut self, dir: &Path, now_ms: u64) -> Result<SessionResult, SessionError> {
        let r = self.session.finalize_session(dir, now_ms)?;
        self.log_end(now_ms, SessionState::End);
        Ok(r)
    }

    /// Writes whatever has been rated under an aborted file name.
    pub fn abort(&mut self, dir: &Path, now_ms: u64) -> Result<SessionResult, SessionError> {
        let _ = self.engine.stop();
        let r = self.session.abort(dir, now_ms)?;
        self.log_end(now_ms, SessionState::Aborted);
        Ok(r)
    }

    pub fn into_parts(self) -> (Session, E) {
        (self.session, self.engine)
    }
}
