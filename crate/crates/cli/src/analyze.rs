use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use mushra::analysis::{
    aggregate, aggregate_csv, heatmap_csv, heatmap_rows, heatmap_svg, included_rows, merge_dwell, screen_assessors,
    screening_csv, Pooling,
};
use mushra::arir::{Manifest, SeatId};
use mushra::session::{read_results, write_atomic, ResultRow};
use mushra::telemetry::{compute_dwell, read_log, session_end, teleports, Dwell};

use crate::Failure;

#[derive(clap::Args)]
pub struct Args {
    /// Result CSVs, telemetry JSONL files, or directories holding them.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Where to write aggregate.csv, screening.csv, heatmap.csv and heatmap.svg.
    #[arg(short, long)]
    out: PathBuf,
    /// Hidden-reference ratings strictly below this count against an assessor.
    #[arg(long, default_value_t = 90)]
    threshold: u8,
    /// Exclude an assessor when more than this share of their items is low.
    #[arg(long, default_value_t = 0.15)]
    fraction: f64,
    /// Intervals over all ratings instead of per-assessor means.
    #[arg(long)]
    pooled: bool,
    /// Dataset manifest for seat coordinates in heatmap.csv.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Also read `_aborted` result files.
    #[arg(long)]
    include_aborted: bool,
}

#[derive(Default)]
struct Inputs {
    results: Vec<PathBuf>,
    telemetry: Vec<PathBuf>,
}

fn classify(path: &Path, into: &mut Inputs, include_aborted: bool) {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    if name.ends_with(".csv") && (include_aborted || !name.contains("_aborted")) {
        into.results.push(path.to_owned());
    } else if name.ends_with(".jsonl") {
        into.telemetry.push(path.to_owned());
    }
}

fn collect(a: &Args) -> Result<Inputs, Failure> {
    let mut found = Inputs::default();
    for p in &a.inputs {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Failure::config(format!("{}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("results_") || n.starts_with("telemetry_"))
                })
                .collect();
            entries.sort();
            for e in entries {
                classify(&e, &mut found, a.include_aborted);
            }
        } else if p.is_file() {
            classify(p, &mut found, true);
        } else {
            return Err(Failure::config(format!("{} does not exist", p.display())));
        }
    }
    Ok(found)
}

fn dwell_of(path: &Path) -> Result<BTreeMap<SeatId, Dwell>, Failure> {
    let events = read_log(path).map_err(Failure::config)?;
    let end = session_end(&events).or_else(|| events.iter().map(|e| e.t()).max()).unwrap_or(0);
    compute_dwell(&teleports(&events), end).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn write(path: PathBuf, text: &str) -> Result<(), Failure> {
    write_atomic(&path, text.as_bytes()).map_err(Failure::runtime)
}

pub fn run(a: Args) -> Result<(), Failure> {
    let inputs = collect(&a)?;
    let mut rows: Vec<ResultRow> = Vec::new();
    for p in &inputs.results {
        rows.extend(read_results(p).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?);
    }
    let positions = match &a.manifest {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?;
            Manifest::from_toml(&text).map_err(Failure::config)?.seat_positions()
        }
        None => BTreeMap::new(),
    };
    let dwell_maps = inputs
        .telemetry
        .iter()
        .map(|p| dwell_of(p))
        .collect::<Result<Vec<_>, _>>()?;
    let dwell = merge_dwell(&dwell_maps);

    std::fs::create_dir_all(&a.out).map_err(|e| Failure::runtime(format!("{}: {e}", a.out.display())))?;
    let heat = heatmap_rows(&dwell, |s| positions.get(&s).copied());
    write(a.out.join("heatmap.csv"), &heatmap_csv(&heat))?;
    write(a.out.join("heatmap.svg"), &heatmap_svg(&heat))?;

    if rows.is_empty() {
        warn!("no ratings found; wrote the heatmap only");
        return Ok(());
    }
    let screening = screen_assessors(&rows, a.threshold, a.fraction).map_err(Failure::config)?;
    write(a.out.join("screening.csv"), &screening_csv(&screening))?;
    let kept = included_rows(&rows, &screening);
    let excluded = screening.iter().filter(|s| s.excluded).count();
    let pooling = if a.pooled { Pooling::Pooled } else { Pooling::PerAssessor };
    let cells = if kept.is_empty() {
        warn!("every assessor was excluded; aggregate.csv has no cells");
        Vec::new()
    } else {
        aggregate(&kept, pooling).map_err(Failure::config)?
    };
    write(a.out.join("aggregate.csv"), &aggregate_csv(&cells))?;
    info!(
        "{} result files, {} telemetry logs; {} of {} assessors excluded; {} cells",
        inputs.results.len(),
        inputs.telemetry.len(),
        excluded,
        screening.len(),
        cells.len()
    );
    println!("wrote analysis to {}", a.out.display());
    Ok(())
}
