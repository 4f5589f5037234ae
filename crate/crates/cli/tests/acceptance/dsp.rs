use std::sync::Arc;
use std::time::Instant;

use mushra::arir::{ConditionId, SeatId, SourceId};
use mushra::dsp::{
    apply_rotation, make_convolver, sh_rotation_matrix, AnchorFilter, AudioBlock, Orientation, RenderConfig,
    Renderer, ANCHOR_CUTOFF_HZ,
};
use mushra::fixture;
use mushra::wav::{read_wav, write_wav};
use mushra_oracle::{
    db, direct_convolution, dtft_magnitude, max_abs_diff, random_quaternion, random_signal, rng,
    sh_rotation_lstsq,
};
use rand::Rng;

use crate::support::{err, mushra, run_ok, Check};

const RATE: u32 = 48_000;

pub fn convolution() -> Check {
    let t0 = Instant::now();
    let mut r = rng(101);
    let mut worst = 0.0f64;
    for case in 0..100u64 {
        let ir_len = r.random_range(1..=9600usize);
        let sig_len = r.random_range(1..=48_000usize);
        let block = 1usize << r.random_range(5..=11u32);
        let ir = random_signal(ir_len, 10_000 + case);
        let x = random_signal(sig_len, 20_000 + case);
        let mut conv = make_convolver(&ir, block, block).map_err(err)?;

        // the signal followed by enough silence to flush the whole tail,
        // delivered in uneven chunks
        let total = sig_len + ir_len - 1;
        let mut input = x.clone();
        input.resize(total, 0.0);
        let mut out = vec![0.0; total];
        let mut pos = 0;
        while pos < total {
            let n = r.random_range(1..=2 * block).min(total - pos);
            conv.process(&input[pos..pos + n], &mut out[pos..pos + n]);
            pos += n;
        }
        let e = max_abs_diff(&out, &direct_convolution(&x, &ir));
        worst = worst.max(e);
        ensure!(
            e <= 1e-6,
            "case {case}: {ir_len} taps, {sig_len} samples, partition {block}: error {e:.3e}"
        );
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1} s, limit 60 s");
    Ok(format!("100 random cases, worst error {worst:.2e}"))
}

pub fn rotation() -> Check {
    let mut r = rng(202);
    let (mut fit_err, mut ortho_err, mut yaw_err) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..100u64 {
        let q = random_quaternion(&mut r);
        let o = Orientation::from_quaternion(q[0], q[1], q[2], q[3]).ok_or("degenerate quaternion")?;
        let m = sh_rotation_matrix(&o, 2).map_err(err)?;
        let fit = sh_rotation_lstsq(q, 2, 200, 3000 + i);
        for a in 0..9 {
            for b in 0..9 {
                fit_err = fit_err.max((m.get(a, b) - fit[a * 9 + b]).abs());
                let dot: f64 = (0..9).map(|k| m.get(a, k) * m.get(b, k)).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                ortho_err = ortho_err.max((dot - want).abs());
            }
        }

        let yaw = r.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let m = sh_rotation_matrix(&Orientation::from_yaw(yaw), 2).map_err(err)?;
        let channels: Vec<Vec<f64>> = (0..9).map(|c| random_signal(64, 4000 + 9 * i + c)).collect();
        let input = AudioBlock::from_channels(&channels);
        let mut output = AudioBlock::new(9, 64);
        apply_rotation(&m, &input, &mut output).map_err(err)?;
        for acn in [0, 2, 6] {
            yaw_err = yaw_err.max(max_abs_diff(output.channel(acn), &channels[acn]));
        }
    }
    ensure!(fit_err <= 1e-6, "entry error against the fit {fit_err:.3e} > 1e-6");
    ensure!(ortho_err <= 1e-9, "R R^T deviates from I by {ortho_err:.3e} > 1e-9");
    ensure!(yaw_err <= 1e-12, "m = 0 channels changed by {yaw_err:.3e} under yaw");
    Ok(format!(
        "100 orientations: fit {fit_err:.1e}, orthogonality {ortho_err:.1e}, yaw invariance {yaw_err:.1e}"
    ))
}

fn yaw_quaternion(deg: f64) -> [f64; 4] {
    let h = deg.to_radians() / 2.0;
    [h.cos(), 0.0, 0.0, h.sin()]
}

pub fn whole_chain() -> Check {
    let dir = tempfile::tempdir().map_err(err)?;
    let d = dir.path();
    let set = fixture::random_arir_set(&[ConditionId::Reference], 2, 1200, 301);
    set.write_to(&d.join("data")).map_err(err)?;
    let dec = fixture::random_decoder(2, 48, 302);
    dec.save(&d.join("decoder.wav"), RATE).map_err(err)?;
    let sources = [
        fixture::noise_source("a", 5.5, RATE, 303),
        fixture::noise_source("b", 5.5, RATE, 304),
    ];
    for s in &sources {
        write_wav(&d.join(format!("{}.wav", s.id)), RATE, &[s.samples.clone()]).map_err(err)?;
    }

    // a wandering head: one pose row every 20 ms
    let mut r = rng(305);
    let mut trace = String::new();
    for k in 0..25 {
        let q = random_quaternion(&mut r);
        trace.push_str(&format!(
            "{{\"type\":\"pose\",\"t\":{},\"position\":[0.0,0.0,0.0],\"orientation\":[{},{},{},{}]}}\n",
            20 * k,
            q[0],
            q[1],
            q[2],
            q[3]
        ));
    }
    std::fs::write(d.join("poses.jsonl"), trace).map_err(err)?;

    let render = |extra: &[&str], out: &str| {
        let mut cmd = mushra();
        cmd.current_dir(d).args([
            "render",
            "--dataset",
            "data",
            "--decoder",
            "decoder.wav",
            "--condition",
            "reference",
            "--seat",
            "B4",
            "--source",
            "a.wav",
            "--source",
            "b.wav",
            "--duration",
            "0.5",
            "--out",
            out,
        ]);
        cmd.args(extra);
        run_ok(&mut cmd)
    };
    render(&["--trajectory", "poses.jsonl"], "first.wav")?;
    render(&["--trajectory", "poses.jsonl"], "second.wav")?;
    let first = std::fs::read(d.join("first.wav")).map_err(err)?;
    let second = std::fs::read(d.join("second.wav")).map_err(err)?;
    ensure!(first == second, "two renders of the same request differ");

    let yaw = 37.0;
    render(&["--yaw", "37"], "static.wav")?;
    let got = read_wav(&d.join("static.wav")).map_err(err)?;
    let frames = (0.5 * f64::from(RATE)) as usize;
    ensure!(
        got.channels.len() == 2 && got.frames() == frames,
        "render has {} channels x {} frames",
        got.channels.len(),
        got.frames()
    );

    let rot = sh_rotation_lstsq(yaw_quaternion(yaw), 2, 400, 306);
    let seat: SeatId = "B4".parse().map_err(|_| "seat label")?;
    let mut expected = [vec![0.0; frames], vec![0.0; frames]];
    for (k, src) in sources.iter().enumerate() {
        let ir = set.get_arir(&ConditionId::Reference, seat, SourceId(k)).map_err(err)?;
        let x = &src.samples[..frames];
        for c in 0..9 {
            let mut kernel = vec![0.0; ir.len()];
            for j in 0..9 {
                for (kv, hv) in kernel.iter_mut().zip(ir.channel(j)) {
                    *kv += rot[c * 9 + j] * hv;
                }
            }
            let y = direct_convolution(x, &kernel);
            for (ear, acc) in expected.iter_mut().enumerate() {
                let z = direct_convolution(&y[..frames], dec.fir(c, ear));
                for (a, v) in acc.iter_mut().zip(z) {
                    *a += v;
                }
            }
        }
    }
    let e = max_abs_diff(&got.channels[0], &expected[0]).max(max_abs_diff(&got.channels[1], &expected[1]));
    ensure!(e <= 1e-5, "static render differs from the composed kernels by {e:.3e}");
    Ok(format!("head-tracked renders bit-identical; static render error {e:.2e}"))
}

pub fn anchor() -> Check {
    let rate = f64::from(RATE);
    let mut f = AnchorFilter::new(ANCHOR_CUTOFF_HZ, rate, 1).map_err(err)?;
    let mut h = vec![0.0; RATE as usize];
    h[0] = 1.0;
    f.process_channel(0, &mut h);
    let dc = dtft_magnitude(&h, 0.0, rate);
    let at_cutoff = db(dtft_magnitude(&h, 3500.0, rate));
    let at_octave = db(dtft_magnitude(&h, 7000.0, rate));
    ensure!((dc - 1.0).abs() <= 1e-3, "DC gain {dc}");
    ensure!((at_cutoff + 3.01).abs() <= 0.1, "{at_cutoff:.3} dB at 3500 Hz");
    ensure!(at_octave <= -24.0, "{at_octave:.2} dB at 7000 Hz");
    Ok(format!(
        "DC {dc:.6}, 3500 Hz {at_cutoff:.3} dB, 7000 Hz {at_octave:.2} dB"
    ))
}

pub fn realtime_budget() -> Check {
    let block = 512;
    let set = fixture::random_arir_set(&[ConditionId::Reference], 2, RATE as usize, 801);
    let dec = fixture::random_decoder(2, 256, 802);
    let mut r = Renderer::new(set.config(), RenderConfig::new(block, RATE), &dec, 2, set.max_len()).map_err(err)?;
    let seat: SeatId = "C3".parse().map_err(|_| "seat label")?;
    r.select_seat(&set, seat, Some(ConditionId::Reference)).map_err(err)?;
    let bank = vec![
        Some(Arc::new(fixture::noise_source("a", 60.0, RATE, 803))),
        Some(Arc::new(fixture::noise_source("b", 60.0, RATE, 804))),
    ];
    r.set_sources(Arc::new(bank));
    r.play(false);

    let blocks = 60 * RATE as usize / block;
    let mut out = AudioBlock::new(2, block);
    let mut times = Vec::with_capacity(blocks);
    let mut rot = rng(805);
    let mut yaw = 0.0f64;
    for b in 0..blocks {
        // slow head turn with some jitter, as a tracker would report it
        yaw += 0.01 + rot.random_range(-0.005..0.005);
        r.set_orientation(Orientation::from_axis_angle([0.1, 0.2, 1.0], yaw).ok_or("axis")?);
        if b % 900 == 450 {
            let to = if (b / 900) % 2 == 0 {
                ConditionId::LowpassAnchor
            } else {
                ConditionId::Reference
            };
            r.switch_condition(&set, to).map_err(err)?;
        }
        let t0 = Instant::now();
        r.render_block(&mut out).map_err(err)?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    ensure!(r.nonfinite_count() == 0, "non-finite output samples");
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    times.sort_by(f64::total_cmp);
    let p99 = times[times.len() * 99 / 100];
    let max = times[times.len() - 1];
    ensure!(mean < 2.7, "mean block time {mean:.3} ms, budget 2.7 ms");
    Ok(format!(
        "{blocks} blocks of {block}: mean {mean:.3} ms, p99 {p99:.3} ms, max {max:.3} ms"
    ))
}
