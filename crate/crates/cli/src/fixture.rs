use std::fmt::Write as _;
use std::path::PathBuf;

use mushra::arir::ConditionId;
use mushra::fixture::{noise_source, random_arir_set_at, scripted_session};
use mushra::session::write_atomic;
use mushra::wav::write_wav;

use crate::Failure;

#[derive(clap::Args)]
pub struct Args {
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Length of every impulse response.
    #[arg(long, default_value_t = 0.1)]
    ir_seconds: f64,
    #[arg(long, default_value_t = 2)]
    sources: usize,
    #[arg(long, default_value_t = 3)]
    trials: usize,
    /// Length of each trial's noise sample.
    #[arg(long, default_value_t = 8.0)]
    sample_seconds: f64,
    #[arg(long, default_value_t = 48_000)]
    sample_rate: u32,
    #[arg(long, default_value_t = 9000)]
    osc_port: u16,
    #[arg(long, default_value_t = 8080)]
    ws_port: u16,
}

pub fn run(a: Args) -> Result<(), Failure> {
    if a.trials == 0 || a.sources == 0 || !(a.ir_seconds > 0.0) || !(a.sample_seconds > 0.0) {
        return Err(Failure::config("trials, sources and lengths must be positive"));
    }
    let io = |e: &dyn std::fmt::Display| Failure::runtime(e.to_string());
    let ir_len = (a.ir_seconds * f64::from(a.sample_rate)).round().max(1.0) as usize;
    let set = random_arir_set_at(
        a.sample_rate,
        &[ConditionId::Reference, ConditionId::NonParametric, ConditionId::Parametric],
        a.sources,
        ir_len,
        a.seed,
    );
    set.write_to(&a.out.join("data")).map_err(|e| io(&e))?;

    let samples = a.out.join("samples");
    std::fs::create_dir_all(&samples).map_err(|e| io(&e))?;
    let ids: Vec<String> = (1..=a.trials).map(|i| format!("sample{i}")).collect();
    for (i, id) in ids.iter().enumerate() {
        let s = noise_source(id, a.sample_seconds, a.sample_rate, a.seed.wrapping_add(1000 + i as u64));
        write_wav(&samples.join(format!("{id}.wav")), a.sample_rate, &[s.samples]).map_err(|e| io(&e))?;
    }

    let trials = ids.iter().map(|i| format!("{i:?}")).collect::<Vec<_>>().join(", ");
    let config = format!(
        r#"[dataset]
root = "data"

[decoder]
builtin = "cardioid"

[audio]
output = "null"
block = 512

[osc]
listen = "127.0.0.1:{osc}"
notify = ["127.0.0.1:{notify}"]

[websocket]
listen = "127.0.0.1:{ws}"

[session]
assessor = "demo"
seed = {seed}
trials = [{trials}]
samples_dir = "samples"
start_seat = "C3"

[output]
dir = "results"
"#,
        osc = a.osc_port,
        notify = a.osc_port.wrapping_add(1),
        ws = a.ws_port,
        seed = a.seed,
    );
    write_atomic(&a.out.join("serve.toml"), config.as_bytes()).map_err(|e| io(&e))?;

    let mut trace = String::new();
    for row in scripted_session(a.trials, &["A", "B", "C", "D"], 40) {
        writeln!(trace, "{}", serde_json::to_string(&row).expect("row serializes")).expect("string write");
    }
    write_atomic(&a.out.join("trace.jsonl"), trace.as_bytes()).map_err(|e| io(&e))?;
    println!(
        "wrote fixture to {} ({} seats x {} sources x 3 stored conditions, {ir_len} taps)",
        a.out.display(),
        set.seats().count(),
        a.sources
    );
    Ok(())
}
