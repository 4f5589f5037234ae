//! Post-session screening, aggregation and the teleport heatmap.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::arir::{ConditionId, SeatId};
use crate::session::{Attribute, ResultRow};
use crate::telemetry::Dwell;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("assessor {0} has no hidden-reference ratings")]
    NoHiddenReference(String),
    #[error("no ratings to aggregate")]
    EmptyInput,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScreeningOutcome {
    pub assessor: String,
    pub items: usize,
    pub below_threshold: usize,
    pub below_threshold_fraction: f64,
    pub excluded: bool,
    #[serde(skip)]
    pub hidden_ref_ratings: Vec<u8>,
}

/// Excludes an assessor who rated the hidden reference strictly below
/// `threshold` in more than `fraction` of their items.
pub fn screen_assessors(
    rows: &[ResultRow],
    threshold: u8,
    fraction: f64,
) -> Result<Vec<ScreeningOutcome>, AnalysisError> {
    let mut per: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
    for r in rows {
        let v = per.entry(r.assessor.as_str()).or_default();
        if r.condition == ConditionId::HiddenReference {
            v.push(r.value);
        }
    }
    per.into_iter()
        .map(|(assessor, ratings)| {
            if ratings.is_empty() {
                return Err(AnalysisError::NoHiddenReference(assessor.to_owned()));
            }
            let below = ratings.iter().filter(|&&v| v < threshold).count();
            let f = below as f64 / ratings.len() as f64;
            Ok(ScreeningOutcome {
                assessor: assessor.to_owned(),
                items: ratings.len(),
                below_threshold: below,
                below_threshold_fraction: f,
                excluded: f > fraction,
                hidden_ref_ratings: ratings,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Pooling {
    /// Interval over per-assessor means, n - 1 degrees of freedom with n
    /// assessors.
    #[default]
    PerAssessor,
    /// Interval over every rating as if independent.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateCell {
    pub attribute: Attribute,
    pub condition: ConditionId,
    /// Included assessors.
    pub n: usize,
    pub ratings: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Too few observations for an interval; it collapses onto the mean.
    pub degenerate: bool,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Half-width of the two-sided 95% Student-t interval of the mean of `xs`.
fn t_half_width(xs: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).ok()?.inverse_cdf(0.975);
    Some(t * var.sqrt() / (n as f64).sqrt())
}

/// Mean over all ratings per (attribute, condition), with a 95% interval
/// clipped to the rating scale. Rows are sorted by attribute, then condition.
pub fn aggregate(rows: &[ResultRow], pooling: Pooling) -> Result<Vec<AggregateCell>, AnalysisError> {
    if rows.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    type Key = (Attribute, ConditionId);
    let mut cells: BTreeMap<Key, BTreeMap<&str, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        cells
            .entry((r.attribute, r.condition.clone()))
            .or_default()
            .entry(r.assessor.as_str())
            .or_default()
            .push(f64::from(r.value));
    }
    Ok(cells
        .into_iter()
        .map(|((attribute, condition), by_assessor)| {
            let all: Vec<f64> = by_assessor.values().flatten().copied().collect();
            let m = mean(&all);
            let half = match pooling {
                Pooling::PerAssessor => {
                    let means: Vec<f64> = by_assessor.values().map(|v| mean(v)).collect();
                    t_half_width(&means)
                }
                Pooling::Pooled => t_half_width(&all),
            };
            let (lo, hi) = match half {
                Some(h) => ((m - h).max(0.0), (m + h).min(100.0)),
                None => (m, m),
            };
            AggregateCell {
                attribute,
                condition,
                n: by_assessor.len(),
                ratings: all.len(),
                mean: m,
                ci_low: lo,
                ci_high: hi,
                degenerate: half.is_none(),
            }
        })
        .collect())
}

/// Drops the rows of excluded assessors.
pub fn included_rows(rows: &[ResultRow], screening: &[ScreeningOutcome]) -> Vec<ResultRow> {
    let out: BTreeSet<&str> = screening
        .iter()
        .filter(|s| s.excluded)
        .map(|s| s.assessor.as_str())
        .collect();
    rows.iter()
        .filter(|r| !out.contains(r.assessor.as_str()))
        .cloned()
        .collect()
}

pub fn screening_csv(outcomes: &[ScreeningOutcome]) -> String {
    let mut s = String::from("assessor,items,below_threshold,fraction,excluded\n");
    for o in outcomes {
        writeln!(
            s,
            "{},{},{},{:.4},{}",
            o.assessor, o.items, o.below_threshold, o.below_threshold_fraction, o.excluded
        )
        .unwrap();
    }
    s
}

pub fn aggregate_csv(cells: &[AggregateCell]) -> String {
    let mut s = String::from("attribute,condition,n,ratings,mean,ci_low,ci_high,degenerate\n");
    for c in cells {
        writeln!(
            s,
            "{},{},{},{},{:.3},{:.3},{:.3},{}",
            c.attribute.id(),
            c.condition,
            c.n,
            c.ratings,
            c.mean,
            c.ci_low,
            c.ci_high,
            c.degenerate
        )
        .unwrap();
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatmapRow {
    pub seat: SeatId,
    pub x: f64,
    pub y: f64,
    pub dwell_ms: u64,
    pub visits: u64,
}

/// Sums dwell maps from several sessions.
pub fn merge_dwell<'a>(maps: impl IntoIterator<Item = &'a BTreeMap<SeatId, Dwell>>) -> BTreeMap<SeatId, Dwell> {
    let mut out: BTreeMap<SeatId, Dwell> = BTreeMap::new();
    for m in maps {
        for (seat, d) in m {
            let e = out.entry(*seat).or_default();
            e.dwell_ms += d.dwell_ms;
            e.visits += d.visits;
        }
    }
    out
}

/// One row per visited seat. `position` supplies room coordinates; seats
/// it does not know are placed on a unit grid by row and column.
pub fn heatmap_rows(
    dwell: &BTreeMap<SeatId, Dwell>,
    position: impl Fn(SeatId) -> Option<[f64; 3]>,
) -> Vec<HeatmapRow> {
    dwell
        .iter()
        .map(|(&seat, d)| {
            let [x, y, _] = position(seat).unwrap_or([f64::from(seat.row()), f64::from(seat.col()), 0.0]);
            HeatmapRow {
                seat,
                x,
                y,
                dwell_ms: d.dwell_ms,
                visits: d.visits,
            }
        })
        .collect()
}

pub fn heatmap_csv(rows: &[HeatmapRow]) -> String {
    let mut s = String::from("seat,x,y,dwell_ms,visits\n");
    for r in rows {
        writeln!(s, "{},{},{},{},{}", r.seat, r.x, r.y, r.dwell_ms, r.visits).unwrap();
    }
    s
}

const CELL: f64 = 80.0;
const MARGIN: f64 = 40.0;

/// Circle radius for each row: area proportional to dwell, the longest
/// dwell filling half a grid cell.
pub fn circle_radii(rows: &[HeatmapRow]) -> Vec<f64> {
    let max = rows.iter().map(|r| r.dwell_ms).max().unwrap_or(0);
    rows.iter()
        .map(|r| {
            if max == 0 {
                0.0
            } else {
                0.45 * CELL * (r.dwell_ms as f64 / max as f64).sqrt()
            }
        })
        .collect()
}

/// Gray level 0..=255 per row; more visits is darker.
pub fn gray_levels(rows: &[HeatmapRow]) -> Vec<u8> {
    let max = rows.iter().map(|r| r.visits).max().unwrap_or(0).max(1);
    rows.iter()
        .map(|r| (220.0 - 200.0 * r.visits as f64 / max as f64).round() as u8)
        .collect()
}

/// Top-down 5x5 seat grid with one circle per visited seat. Rows run up
/// the page away from the sources, columns left to right.
pub fn heatmap_svg(rows: &[HeatmapRow]) -> String {
    let size = 2.0 * MARGIN + 5.0 * CELL;
    let centre = |seat: SeatId| {
        (
            MARGIN + (f64::from(seat.col()) + 0.5) * CELL,
            MARGIN + (4.0 - f64::from(seat.row()) + 0.5) * CELL,
        )
    };
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    )
    .unwrap();
    writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##).unwrap();
    for seat in SeatId::all() {
        let (cx, cy) = centre(seat);
        writeln!(
            s,
            r##"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="none" stroke="#cccccc"/><text x="{}" y="{}" font-size="10" fill="#888888">{seat}</text>"##,
            cx - CELL / 2.0,
            cy - CELL / 2.0,
            cx - CELL / 2.0 + 3.0,
            cy - CELL / 2.0 + 12.0
        )
        .unwrap();
    }
    for ((r, radius), gray) in rows.iter().zip(circle_radii(rows)).zip(gray_levels(rows)) {
        let (cx, cy) = centre(r.seat);
        writeln!(
            s,
            r##"<circle cx="{cx}" cy="{cy}" r="{radius:.3}" fill="#{gray:02x}{gray:02x}{gray:02x}" stroke="#000000" data-seat="{}" data-dwell-ms="{}" data-visits="{}"/>"##,
            r.seat, r.dwell_ms, r.visits
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}
