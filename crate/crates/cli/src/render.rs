use std::path::{Path, PathBuf};

use mushra::arir::{load_arir_set, load_source_sample, ArirSet, ConditionId, SeatId, SourceSample};
use mushra::config::{BuiltinDecoder, EngineConfig};
use mushra::dsp::{render_offline, BinauralDecoder, OfflineRequest, Orientation, RenderConfig, RenderError, TrajectoryPoint};
use mushra::telemetry::{read_log, TelemetryEvent};
use mushra::wav::write_wav;

use crate::Failure;

#[derive(clap::Args)]
pub struct Args {
    /// Configuration file supplying dataset, decoder and samples directory.
    #[arg(short, long, env = "MUSHRA_CONFIG")]
    config: Option<PathBuf>,
    /// Dataset root (overrides the config).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Manifest path; defaults to `<dataset>/manifest.toml`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Decoder WAV (overrides the config).
    #[arg(long, conflicts_with = "builtin_decoder")]
    decoder: Option<PathBuf>,
    /// Built-in decoder: cardioid or omni.
    #[arg(long, value_parser = parse_builtin)]
    builtin_decoder: Option<BuiltinDecoder>,
    #[arg(long)]
    condition: ConditionId,
    #[arg(long)]
    seat: String,
    /// Sample id (looked up in the samples directory) or WAV path. Repeat
    /// once per source position; a single sample plays from all of them.
    #[arg(long = "source", required = true)]
    sources: Vec<String>,
    /// Pose rows (telemetry JSONL) giving the head orientation over time.
    #[arg(long, conflicts_with = "yaw")]
    trajectory: Option<PathBuf>,
    /// Fixed head yaw in degrees, positive to the left.
    #[arg(long)]
    yaw: Option<f64>,
    /// Seconds to render; defaults to the longest source.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long, default_value_t = mushra::dsp::render::DEFAULT_BLOCK)]
    block: usize,
    #[arg(short, long)]
    out: PathBuf,
}

fn parse_builtin(s: &str) -> Result<BuiltinDecoder, String> {
    match s {
        "cardioid" => Ok(BuiltinDecoder::Cardioid),
        "omni" => Ok(BuiltinDecoder::Omni),
        _ => Err(format!("unknown builtin decoder {s:?} (cardioid, omni)")),
    }
}

fn trajectory(path: &Path) -> Result<Vec<TrajectoryPoint>, Failure> {
    let events = read_log(path).map_err(Failure::config)?;
    let points: Vec<TrajectoryPoint> = events
        .iter()
        .filter_map(|e| match e {
            TelemetryEvent::Pose { t, orientation: [w, x, y, z], .. } => Some((*t, Orientation::from_quaternion(*w, *x, *y, *z))),
            _ => None,
        })
        .map(|(t, o)| {
            o.map(|orientation| TrajectoryPoint {
                time: t as f64 / 1e3,
                orientation,
            })
            .ok_or_else(|| Failure::config(format!("{}: degenerate quaternion at t={t}", path.display())))
        })
        .collect::<Result<_, _>>()?;
    Ok(points)
}

fn load_sample(spec: &str, dir: Option<&Path>, rate: u32) -> Result<SourceSample, Failure> {
    let path = Path::new(spec);
    let path = if path.extension().is_some_and(|e| e == "wav") || path.exists() {
        path.to_owned()
    } else if let Some(d) = dir {
        d.join(format!("{spec}.wav"))
    } else {
        return Err(Failure::config(format!(
            "source {spec:?} is not a WAV path and no samples directory is configured"
        )));
    };
    let mut s = load_source_sample(&path, rate).map_err(Failure::config)?;
    s.id = spec.to_owned();
    Ok(s)
}

fn seat_list(set: &ArirSet) -> String {
    set.seats().map(|s| s.label()).collect::<Vec<_>>().join(", ")
}

pub fn run(a: Args) -> Result<(), Failure> {
    let config = a
        .config
        .as_deref()
        .map(EngineConfig::load)
        .transpose()
        .map_err(Failure::config)?;
    let root = a
        .dataset
        .clone()
        .or_else(|| config.as_ref().map(|c| c.dataset.root.clone()))
        .ok_or_else(|| Failure::config("give --dataset or --config"))?;
    let manifest = a
        .manifest
        .clone()
        .or_else(|| match (&a.dataset, &config) {
            (None, Some(c)) => Some(c.manifest_path()),
            _ => None,
        })
        .unwrap_or_else(|| root.join("manifest.toml"));
    let set = load_arir_set(&root, &manifest).map_err(Failure::config)?;
    let ac = set.config();

    let decoder = match (&a.decoder, a.builtin_decoder, &config) {
        (Some(p), _, _) => BinauralDecoder::load(p, ac.order, ac.convention).map_err(Failure::config)?,
        (None, Some(b), _) => builtin(b, &set),
        (None, None, Some(c)) => match (&c.decoder.file, c.decoder.builtin) {
            (Some(p), _) => BinauralDecoder::load(p, ac.order, ac.convention).map_err(Failure::config)?,
            (None, b) => builtin(b.unwrap_or(BuiltinDecoder::Cardioid), &set),
        },
        (None, None, None) => builtin(BuiltinDecoder::Cardioid, &set),
    };

    let seat: SeatId = a
        .seat
        .parse()
        .ok()
        .filter(|s| set.seats().any(|x| x == *s))
        .ok_or_else(|| Failure::config(format!("unknown seat {:?}; valid seats: {}", a.seat, seat_list(&set))))?;

    let dir = config.as_ref().map(|c| c.session.samples_dir.as_path());
    let mut sources = a
        .sources
        .iter()
        .map(|s| load_sample(s, dir, ac.sample_rate))
        .collect::<Result<Vec<_>, _>>()?;
    if sources.len() == 1 {
        let one = sources.pop().expect("one source");
        sources = vec![one; set.source_count()];
    }
    let duration = a.duration.unwrap_or_else(|| {
        sources
            .iter()
            .map(SourceSample::duration)
            .fold(0.0, f64::max)
    });

    let trajectory = match (&a.trajectory, a.yaw) {
        (Some(p), _) => trajectory(p)?,
        (None, Some(deg)) => vec![TrajectoryPoint {
            time: 0.0,
            orientation: Orientation::from_yaw(deg.to_radians()),
        }],
        (None, None) => Vec::new(),
    };

    let req = OfflineRequest {
        arirs: &set,
        sources: &sources,
        condition: a.condition.clone(),
        seat,
        trajectory: &trajectory,
        decoder: Some(&decoder),
        anchor: false,
        duration,
        config: RenderConfig::new(a.block, ac.sample_rate),
    };
    let [l, r] = render_offline(&req).map_err(|e| match e {
        RenderError::UnknownSeat(s) => {
            Failure::config(format!("unknown seat {s}; valid seats: {}", seat_list(&set)))
        }
        other => Failure::config(other),
    })?;
    write_wav(&a.out, ac.sample_rate, &[l, r]).map_err(|e| Failure::runtime(format!("{}: {e}", a.out.display())))?;
    println!(
        "wrote {} ({} at {seat}, {duration:.3} s)",
        a.out.display(),
        a.condition
    );
    Ok(())
}

fn builtin(b: BuiltinDecoder, set: &ArirSet) -> BinauralDecoder {
    let ac = set.config();
    match b {
        BuiltinDecoder::Cardioid => BinauralDecoder::cardioid_pair(ac.order, ac.convention),
        BuiltinDecoder::Omni => BinauralDecoder::omni_passthrough(ac.order, ac.convention),
    }
}
