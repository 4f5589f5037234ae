use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use mushra::analysis::screen_assessors;
use mushra::session::{read_results, Session, SessionConfig};
use serde_json::Value;

use crate::support::{err, mushra, read_plain_csv, run_ok, Check, Spawned};

fn json_lines(path: &Path) -> Result<Vec<Value>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(err))
        .collect()
}

fn field<'a>(v: &'a Value, key: &str) -> Result<&'a Value, String> {
    v.get(key).ok_or_else(|| format!("missing {key:?} in {v}"))
}

fn as_u64(v: &Value, key: &str) -> Result<u64, String> {
    field(v, key)?.as_u64().ok_or_else(|| format!("{key:?} is not an integer in {v}"))
}

/// `(attribute, label) -> value` as scripted in the trace.
fn scripted_ratings(trace: &[Value]) -> Result<BTreeMap<(String, String), u64>, String> {
    let mut out = BTreeMap::new();
    for row in trace {
        if row["type"] == "ui" && row["kind"] == "rating" {
            let payload = field(row, "payload")?.as_str().ok_or("payload")?;
            let parts: Vec<&str> = payload.split(',').collect();
            ensure!(parts.len() == 3, "rating payload {payload:?}");
            let value = parts[2].parse().map_err(err)?;
            out.insert((parts[0].to_owned(), parts[1].to_owned()), value);
        }
    }
    Ok(out)
}

pub fn scripted_session() -> Check {
    let dir = tempfile::tempdir().map_err(err)?;
    let fx = dir.path().join("fx");
    let seed = 7u64;
    run_ok(mushra().args(["make-fixture", "--trials", "1", "--seed", "7", "--out"]).arg(&fx))?;

    let server = Spawned::start(
        mushra()
            .arg("serve")
            .arg("--config")
            .arg(fx.join("serve.toml"))
            .args(["--exit-on-finish", "--osc-listen", "127.0.0.1:0", "--ws-listen", "127.0.0.1:0"]),
    )?;
    let ready = server.line_matching(|l| l.starts_with("ready "), Duration::from_secs(30))?;
    let osc = ready
        .split_whitespace()
        .find_map(|w| w.strip_prefix("osc="))
        .ok_or_else(|| format!("no osc address in {ready:?}"))?
        .to_owned();

    let report = run_ok(
        mushra()
            .args(["simulate-client", "--target", &osc, "--trace"])
            .arg(fx.join("trace.jsonl")),
    )?;
    let report: Value = serde_json::from_str(report.trim()).map_err(err)?;
    let rest = server.wait(Duration::from_secs(30))?;
    let summary: Value = rest
        .iter()
        .rev()
        .find(|l| l.starts_with('{'))
        .ok_or("server printed no summary")
        .and_then(|l| serde_json::from_str(l).map_err(|_| "summary is not JSON"))?;
    ensure!(summary["aborted"] == false, "session was not completed: {summary}");

    let results = PathBuf::from(field(&summary, "results")?.as_str().ok_or("results path")?);
    let meta_path = PathBuf::from(field(&summary, "meta")?.as_str().ok_or("meta path")?);
    let rows = read_plain_csv(&results)?;
    ensure!(rows.len() == 16, "{} result rows, expected 16", rows.len());

    // one condition per label, one label per condition, the same in every row
    let mut by_label: BTreeMap<String, String> = BTreeMap::new();
    for r in &rows {
        ensure!(r["assessor"] == "demo" && r["trial"] == "0", "unexpected row {r:?}");
        let prev = by_label.insert(r["label"].clone(), r["condition"].clone());
        ensure!(
            prev.is_none() || prev.as_ref() == Some(&r["condition"]),
            "label {} maps to both {} and {}",
            r["label"],
            prev.unwrap_or_default(),
            r["condition"]
        );
    }
    let conditions: BTreeSet<&String> = by_label.values().collect();
    let want: BTreeSet<String> = ["hidden_reference", "lowpass_anchor", "non_parametric", "parametric"]
        .map(String::from)
        .into();
    ensure!(
        conditions.len() == by_label.len() && conditions.into_iter().cloned().collect::<BTreeSet<_>>() == want,
        "labels are not a bijection onto the conditions: {by_label:?}"
    );

    let meta: Value = serde_json::from_str(&std::fs::read_to_string(&meta_path).map_err(err)?).map_err(err)?;
    let meta_labels: BTreeMap<String, String> =
        serde_json::from_value(meta["trials"][0]["labels"].clone()).map_err(|e| format!("meta labels: {e}"))?;
    ensure!(meta_labels == by_label, "meta.json labels {meta_labels:?} differ from results {by_label:?}");

    let mut cfg = SessionConfig::new("demo", seed);
    cfg.trials = vec!["sample1".into()];
    let fresh = Session::new(cfg, 0).map_err(err)?;
    for (label, cond) in &by_label {
        let c = fresh.resolve_label(label).map_err(err)?;
        ensure!(c.as_str() == cond, "a fresh session with seed {seed} maps {label} to {c}, results say {cond}");
    }

    let trace = json_lines(&fx.join("trace.jsonl"))?;
    let scripted = scripted_ratings(&trace)?;
    for r in &rows {
        let key = (r["attribute"].clone(), r["label"].clone());
        let want = scripted.get(&key).ok_or_else(|| format!("row {key:?} was never sent"))?;
        ensure!(r["value"] == want.to_string(), "{key:?} stored {}, sent {want}", r["value"]);
    }

    // dwell: every stay runs to the next teleport, the last one to the end
    let tel_name = field(&meta, "telemetry")?.as_str().ok_or("telemetry name")?;
    let tel_path = results.with_file_name(tel_name);
    let events = json_lines(&tel_path)?;
    let end = events
        .iter()
        .rev()
        .find(|e| e["type"] == "session" && e["state"] == "end")
        .ok_or("telemetry has no session end")?;
    let end_t = as_u64(end, "t")?;
    let arrivals: Vec<(u64, String)> = events
        .iter()
        .filter(|e| e["type"] == "teleport")
        .map(|e| Ok((as_u64(e, "t")?, field(e, "to")?.as_str().unwrap_or_default().to_owned())))
        .collect::<Result<_, String>>()?;
    ensure!(arrivals.first().map(|a| a.0) == Some(0), "no arrival at t = 0");
    let mut dwell: BTreeMap<String, u64> = BTreeMap::new();
    for (i, (t, seat)) in arrivals.iter().enumerate() {
        let leave = arrivals.get(i + 1).map_or(end_t, |n| n.0);
        *dwell.entry(seat.clone()).or_default() += leave - t;
    }
    let total: u64 = dwell.values().sum();
    let wall = as_u64(&meta, "finished_unix_ms")? - as_u64(&meta, "started_unix_ms")?;
    ensure!(total == end_t, "dwell sums to {total} ms, session ended at {end_t} ms");
    ensure!(end_t == wall, "telemetry end {end_t} ms, meta duration {wall} ms");

    let analysis = dir.path().join("analysis");
    run_ok(
        mushra()
            .arg("analyze")
            .arg(results.parent().ok_or("results dir")?)
            .arg("--out")
            .arg(&analysis)
            .arg("--manifest")
            .arg(fx.join("data").join("manifest.toml")),
    )?;
    let heat = read_plain_csv(&analysis.join("heatmap.csv"))?;
    let heat_total: u64 = heat.iter().map(|r| r["dwell_ms"].parse::<u64>().unwrap_or(0)).sum();
    ensure!(heat_total == total, "heatmap.csv sums to {heat_total} ms, expected {total}");
    for r in &heat {
        let want = dwell.get(&r["seat"]).copied().unwrap_or(0);
        ensure!(r["dwell_ms"] == want.to_string(), "heatmap dwell for {} is {}, expected {want}", r["seat"], r["dwell_ms"]);
    }

    Ok(format!(
        "{} datagrams replayed; 16 rows unblinded consistently; {} arrivals over {} seats, dwell {total} ms = session length",
        report["datagrams"],
        arrivals.len(),
        dwell.len()
    ))
}

const ATTRIBUTES: [&str; 4] = ["basic_audio_quality", "localizability", "spatial_quality", "timbral_quality"];

/// Results for three trials: twelve hidden-reference items per assessor,
/// `low` of them rated 89 and the rest exactly 90.
fn cohort_csv(assessor: &str, low: usize) -> String {
    let mut s = String::from("assessor,trial,attribute,condition,label,value,unix_ms\n");
    let mut item = 0;
    for trial in 0..3 {
        for attr in ATTRIBUTES {
            let hidden = if item < low { 89 } else { 90 };
            item += 1;
            for (label, cond, value) in [
                ("A", "parametric", 70),
                ("B", "hidden_reference", hidden),
                ("C", "lowpass_anchor", 20),
                ("D", "non_parametric", 60),
            ] {
                writeln!(s, "{assessor},{trial},{attr},{cond},{label},{value},{}", 1000 + item).unwrap();
            }
        }
    }
    s
}

pub fn screening() -> Check {
    let dir = tempfile::tempdir().map_err(err)?;
    let input = dir.path().join("results");
    std::fs::create_dir_all(&input).map_err(err)?;
    let cohort = [("x0", 0usize, false), ("x1", 1, false), ("x2", 2, true)];
    for (a, low, _) in cohort {
        std::fs::write(input.join(format!("results_{a}_s1.csv")), cohort_csv(a, low)).map_err(err)?;
    }

    let mut rows = Vec::new();
    for (a, _, _) in cohort {
        rows.extend(read_results(&input.join(format!("results_{a}_s1.csv"))).map_err(err)?);
    }
    let outcomes = screen_assessors(&rows, 90, 0.15).map_err(err)?;
    for (a, low, excluded) in cohort {
        let o = outcomes
            .iter()
            .find(|o| o.assessor == a)
            .ok_or_else(|| format!("no outcome for {a}"))?;
        ensure!(
            o.items == 12 && o.below_threshold == low && o.excluded == excluded,
            "{a}: {} of {} low, excluded {}",
            o.below_threshold,
            o.items,
            o.excluded
        );
    }

    let out = dir.path().join("analysis");
    run_ok(mushra().arg("analyze").arg(&input).arg("--out").arg(&out))?;
    let screening = read_plain_csv(&out.join("screening.csv"))?;
    for (a, low, excluded) in cohort {
        let r = screening
            .iter()
            .find(|r| r["assessor"] == a)
            .ok_or_else(|| format!("screening.csv lacks {a}"))?;
        ensure!(
            r["items"] == "12" && r["below_threshold"] == low.to_string() && r["excluded"] == excluded.to_string(),
            "screening.csv row for {a}: {r:?}"
        );
    }
    let aggregate = read_plain_csv(&out.join("aggregate.csv"))?;
    ensure!(aggregate.len() == 16, "{} aggregate cells, expected 16", aggregate.len());
    for c in &aggregate {
        ensure!(c["n"] == "2" && c["ratings"] == "6", "cell {c:?} should hold the two kept assessors");
    }
    let hidden = aggregate
        .iter()
        .find(|c| c["attribute"] == "basic_audio_quality" && c["condition"] == "hidden_reference")
        .ok_or("no hidden reference cell")?;
    // x0 rates 90 throughout; x1 rated 89 only on its first item
    let mean: f64 = hidden["mean"].parse().map_err(err)?;
    ensure!((mean - (90.0 * 5.0 + 89.0) / 6.0).abs() < 1e-3, "hidden reference mean {mean}");

    Ok("2 of 12 low excluded, 1 of 12 kept, ratings of exactly 90 not counted; analyze agrees".into())
}
