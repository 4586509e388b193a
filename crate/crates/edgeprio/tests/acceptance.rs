//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod oracles;
mod support;

use std::fs;
use std::io::Write;
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::thread;
use std::time::{Duration, Instant};

use edgeprio::agent::{self, AgentConfig};
use edgeprio::bench::{run_bench, BenchResult, BenchSpec, WorkloadSource};
use edgeprio::formats::write_trace;
use edgeprio::gateway::{spawn, GatewayConfig};
use edgeprio::operator::{encode_gray, process_bytes, FillSettings};
use edgeprio_core::seed::derive;
use edgeprio_core::sim::{run, run_with, SimConfig};
use edgeprio_core::workload::{generate, ProfileSpec};
use edgeprio_core::{
    threshold_flood_fill, validate_trace, Connectivity, GrayImage, ProcessPolicy, RatioSpline,
    TraceEvent, TraceLimits, UploadPolicy,
};
use oracles::{bfs_fill_oracle, brute_interpolate, drive_link, fluid_link_oracle, mean, median};
use oracles::{ClairvoyantProcess, ClairvoyantUpload};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{bright_noise_png, check_inverse_priority, drop_file, framed_noise_png, sha};

const SEEDS: usize = 20;
const BASE_SEED: u64 = 2024;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Reference {
    bench: BenchResult,
    elapsed: Duration,
}

fn reference_bench() -> Result<Reference, String> {
    let t0 = Instant::now();
    let spec = BenchSpec {
        configs: ["0,r", "1,s", "1,r", "3,s", "3,r", "ffill,0"]
            .map(String::from)
            .to_vec(),
        repeats: SEEDS,
        keep_traces: true,
        ..BenchSpec::new(
            WorkloadSource::Generated(ProfileSpec::reference(0)),
            BASE_SEED,
        )
    };
    let bench = run_bench(&spec).map_err(|e| e.to_string())?;
    Ok(Reference {
        bench,
        elapsed: t0.elapsed(),
    })
}

fn paired(bench: &BenchResult, lo: &str, hi: &str) -> usize {
    let (a, b) = (bench.latencies(lo), bench.latencies(hi));
    a.iter().zip(&b).filter(|(x, y)| x < y).count()
}

fn criterion1(r: &Reference) -> Outcome {
    let b = &r.bench;
    let (ff, s1, none) = (
        median(&b.latencies("ffill,0")),
        median(&b.latencies("1,s")),
        median(&b.latencies("0,r")),
    );
    let (p1, p2) = (paired(b, "ffill,0", "1,s"), paired(b, "1,s", "0,r"));
    let detail = format!(
        "medians ffill,0 {ff:.1} s < 1,s {s1:.1} s < 0,r {none:.1} s; paired {p1}/{SEEDS} and {p2}/{SEEDS}; {:.1} s",
        r.elapsed.as_secs_f64()
    );
    ensure(ff < s1 && s1 < none, || {
        format!("median order violated: {detail}")
    })?;
    ensure(p1 >= 18 && p2 >= 18, || {
        format!("too few paired wins: {detail}")
    })?;
    ensure(r.elapsed < Duration::from_secs(30), || {
        format!("too slow: {detail}")
    })?;
    Ok(detail)
}

fn criterion2(r: &Reference) -> Outcome {
    let b = &r.bench;
    let (s1, r1) = (mean(&b.latencies("1,s")), mean(&b.latencies("1,r")));
    let mut oracle = Vec::with_capacity(SEEDS);
    for rep in 0..SEEDS {
        let seed = derive(BASE_SEED, rep as u64);
        let w = generate(&ProfileSpec::reference(seed)).map_err(|e| e.to_string())?;
        let truth = w.true_ratios();
        let cfg = SimConfig {
            num_cpu_slots: 1,
            seed,
            ..SimConfig::default()
        };
        let out = run_with(
            &cfg,
            &w,
            &mut ClairvoyantProcess(truth.clone()),
            &mut ClairvoyantUpload(truth),
        )
        .map_err(|e| e.to_string())?;
        oracle.push(out.metrics.end_to_end_latency);
    }
    let opt = mean(&oracle);
    let gain = 1.0 - s1 / r1;
    let headroom = 1.0 - opt / r1;
    let detail = format!(
        "mean 1,s {s1:.1} s vs 1,r {r1:.1} s ({:.2}% better, need >= 2%); clairvoyant {opt:.1} s, headroom {:.2}% (need > 5%)",
        100.0 * gain,
        100.0 * headroom
    );
    ensure(s1 <= 0.98 * r1, || detail.clone())?;
    ensure(headroom > 0.05, || detail.clone())?;
    Ok(detail)
}

fn criterion3(r: &Reference) -> Outcome {
    let b = &r.bench;
    let (s3, r3, ff) = (
        mean(&b.latencies("3,s")),
        mean(&b.latencies("3,r")),
        mean(&b.latencies("ffill,0")),
    );
    let parity = (s3 - r3).abs() / ((s3 + r3) / 2.0);
    let (ds, dr) = ((s3 - ff).abs() / ff, (r3 - ff).abs() / ff);
    let detail = format!(
        "3,s {s3:.1} s, 3,r {r3:.1} s, gap {:.2}% (<= 1%); vs ffill,0 {ff:.1} s: {:.2}% and {:.2}% (<= 2%)",
        100.0 * parity,
        100.0 * ds,
        100.0 * dr
    );
    ensure(parity <= 0.01 && ds <= 0.02 && dr <= 0.02, || {
        detail.clone()
    })?;
    Ok(detail)
}

fn criterion4() -> Outcome {
    let cap = 2_000_000.0;
    let single = drive_link(cap, &[(0.0, 3_000_000)]);
    ensure(single == [1.5], || {
        format!("single transfer finished at {single:?}, want 1.5")
    })?;
    for k in 2..=6usize {
        let t = drive_link(cap, &vec![(0.0, 1_000_000); k]);
        let want = k as f64 * 1_000_000.0 / cap;
        ensure(t.iter().all(|x| (x - want).abs() <= 1e-9 * want), || {
            format!("{k} equal transfers finished at {t:?}, want {want}")
        })?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(BASE_SEED);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let schedule = [
            (0.0, rng.random_range(50_000..4_000_000u64)),
            (
                rng.random_range(0..2000u32) as f64 / 1000.0,
                rng.random_range(50_000..4_000_000u64),
            ),
        ];
        let got = drive_link(cap, &schedule);
        let want = fluid_link_oracle(cap, &schedule, 1e-3);
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
    }
    let detail = format!(
        "exact single and k-way finishes; 100 staggered pairs within {:.3} ms of the 1 ms oracle",
        worst * 1e3
    );
    ensure(worst <= 1e-3, || detail.clone())?;
    Ok(detail)
}

fn criterion5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(BASE_SEED + 5);
    let mut knots: Vec<(u32, f64)> = Vec::new();
    while knots.len() < 60 {
        let i = rng.random_range(0..5000u32);
        if !knots.iter().any(|k| k.0 == i) {
            knots.push((i, rng.random_range(0.0..1e6)));
        }
    }
    let build = |k: &[(u32, f64)]| {
        let mut s = RatioSpline::new();
        for &(i, r) in k {
            s.observe(i, r).unwrap();
        }
        s
    };
    let s = build(&knots);
    for &(i, r) in &knots {
        ensure(s.estimate(i) == r, || format!("knot {i} not exact"))?;
    }
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let q = rng.random_range(0..6000u32);
        let want = brute_interpolate(&knots, q, 0.0);
        worst = worst.max((s.estimate(q) - want).abs() / want.abs().max(1.0));
    }
    ensure(worst <= 1e-9, || format!("interpolation error {worst:e}"))?;
    for _ in 0..20 {
        let mut shuffled = knots.clone();
        shuffled.shuffle(&mut rng);
        let t = build(&shuffled);
        ensure((0..6000).all(|q| t.estimate(q) == s.estimate(q)), || {
            "shuffled insertion changed estimates".into()
        })?;
    }
    Ok(format!(
        "60 knots exact; 10,000 queries within {worst:.1e} of brute force; 20 shuffles identical"
    ))
}

fn criterion6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(BASE_SEED + 6);
    let mut changed = 0;
    for n in 0..200 {
        let dark = rng.random_range(0.2..0.8);
        let px: Vec<u8> = (0..256)
            .map(|_| {
                if rng.random_bool(dark) {
                    rng.random_range(0..=30)
                } else {
                    rng.random()
                }
            })
            .collect();
        let img = GrayImage::from_pixels(16, 16, px).unwrap();
        let once = threshold_flood_fill(&img, 30, Connectivity::Four);
        let want = bfs_fill_oracle(16, 16, img.pixels(), 30);
        ensure(once.pixels() == &want[..], || {
            format!("image {n} differs from the BFS reference")
        })?;
        ensure(
            threshold_flood_fill(&once, 30, Connectivity::Four) == once,
            || format!("image {n} not idempotent"),
        )?;
        changed += usize::from(once != img);
    }
    let (w, h) = (256, 256);
    let mut px = vec![200u8; w * h];
    for y in 0..h {
        for x in 0..w / 2 {
            px[y * w + x] = rng.random_range(0..30);
        }
    }
    let orig = encode_gray(&GrayImage::from_pixels(w, h, px).unwrap());
    let (out, _) = process_bytes(&orig, FillSettings::default()).map_err(|e| e.to_string())?;
    let detail = format!(
        "200 random 16x16 images match BFS ({changed} altered) and are idempotent; noisy half-dark PNG {} -> {} bytes",
        orig.len(),
        out.len()
    );
    ensure(out.len() < orig.len(), || detail.clone())?;
    Ok(detail)
}

fn criterion7() -> Outcome {
    let configs = [
        (
            0,
            ProcessPolicy::NoProcessing,
            UploadPolicy::RandomOrder,
            false,
        ),
        (
            1,
            ProcessPolicy::splines(),
            UploadPolicy::InversePriority,
            false,
        ),
        (
            2,
            ProcessPolicy::RandomOrder,
            UploadPolicy::RandomOrder,
            false,
        ),
        (
            3,
            ProcessPolicy::splines(),
            UploadPolicy::InversePriority,
            false,
        ),
        (
            0,
            ProcessPolicy::NoProcessing,
            UploadPolicy::RandomOrder,
            true,
        ),
    ];
    let csv = |t: &[TraceEvent]| {
        let mut buf = Vec::new();
        write_trace(&mut buf, t).unwrap();
        buf
    };
    for seed in [1u64, 2, 3] {
        let w = generate(&ProfileSpec::reference(seed)).map_err(|e| e.to_string())?;
        for &(m, p, u, offline) in &configs {
            let cfg = SimConfig {
                num_cpu_slots: m,
                process_policy: p,
                upload_policy: u,
                offline_preprocessed: offline,
                seed,
                ..SimConfig::default()
            };
            let a = run(&cfg, &w).map_err(|e| e.to_string())?;
            let b = run(&cfg, &w).map_err(|e| e.to_string())?;
            ensure(csv(&a.trace) == csv(&b.trace), || {
                format!("trace differs for {cfg:?}")
            })?;
        }
    }
    Ok("5 configurations x 3 seeds produce byte-identical trace CSVs".into())
}

fn criterion8() -> Result<(String, Vec<TraceEvent>), String> {
    let watch = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = tempfile::tempdir().map_err(|e| e.to_string())?;
    let gw = spawn(GatewayConfig {
        listen: "127.0.0.1:0".parse().unwrap(),
        storage_dir: store.path().to_owned(),
        max_body: 64 << 20,
    })
    .map_err(|e| e.to_string())?;

    let mut files: Vec<(String, Vec<u8>)> = (0..30u64)
        .map(|i| {
            let bytes = if i == 17 {
                // The slow, large one: incompressible and not improvable.
                bright_noise_png(1024, 1024, i)
            } else {
                framed_noise_png(192, 192, 8 + (i as usize * 7) % 70, i)
            };
            (format!("img_{i:04}.png"), bytes)
        })
        .collect();
    for (name, bytes) in &files[..10] {
        drop_file(watch.path(), name, bytes);
    }

    let cfg = AgentConfig {
        process_workers: 1,
        upload_workers: 2,
        poll_interval: Duration::from_millis(25),
        upload_rate: Some(1_000_000.0),
        max_docs: Some(30),
        seed: BASE_SEED,
        ..AgentConfig::new(watch.path(), gw.url(), "accept")
    };
    let stop = AtomicBool::new(false);
    let report = thread::scope(|s| {
        let later = &files[10..];
        let dir = watch.path();
        s.spawn(move || {
            thread::sleep(Duration::from_millis(150));
            for (n, (name, bytes)) in later.iter().enumerate() {
                if n % 4 == 0 {
                    // Written in place, in two pieces.
                    let mut f = fs::File::create(dir.join(name)).unwrap();
                    f.write_all(&bytes[..bytes.len() / 2]).unwrap();
                    f.write_all(&bytes[bytes.len() / 2..]).unwrap();
                } else {
                    drop_file(dir, name, bytes);
                }
                thread::sleep(Duration::from_millis(40));
            }
        });
        agent::run(&cfg, &stop)
    })
    .map_err(|f| f.error.to_string())?;

    ensure(report.uploaded == 30, || {
        format!("{} of 30 uploaded", report.uploaded)
    })?;
    let processed: std::collections::BTreeSet<u32> = report
        .trace
        .iter()
        .filter(|e| e.kind == edgeprio_core::EventKind::ProcEnd)
        .map(|e| e.index)
        .collect();
    let mut identical = 0;
    for (i, (name, original)) in files.iter_mut().enumerate() {
        let stored = fs::read(store.path().join(format!("accept/{i}.png")))
            .map_err(|e| format!("{name}: {e}"))?;
        let expected = if processed.contains(&(i as u32)) {
            let (out, _) =
                process_bytes(original, FillSettings::default()).map_err(|e| e.to_string())?;
            // Output no smaller than the input is discarded by the agent.
            if out.len() < original.len() {
                out
            } else {
                original.clone()
            }
        } else {
            original.clone()
        };
        ensure(sha(&stored) == sha(&expected), || {
            format!("{name}: stored digest differs")
        })?;
        identical += 1;
    }
    let stats = check_inverse_priority(&report.trace)?;
    ensure(
        stats.processed_uploads > 0 && stats.original_uploads > 0,
        || {
            format!(
                "ordering check vacuous: {} processed, {} original uploads",
                stats.processed_uploads, stats.original_uploads
            )
        },
    )?;
    Ok((
        format!(
            "{identical}/30 stored digest-identical; {} processed and {} original uploads all in inverse-priority order",
            stats.processed_uploads, stats.original_uploads
        ),
        report.trace,
    ))
}

fn criterion9(r: &Reference, agent_trace: Option<&[TraceEvent]>) -> Outcome {
    let mut checked = 0;
    for run in &r.bench.runs {
        let cfg = edgeprio::bench::parse_key(&run.config, &SimConfig::default())
            .map_err(|e| e.to_string())?;
        let trace = run.trace.as_deref().ok_or("bench kept no traces")?;
        validate_trace(
            trace,
            TraceLimits {
                cpu_slots: Some(cfg.num_cpu_slots),
                upload_slots: Some(cfg.max_concurrent_uploads),
                require_complete: true,
                expected_docs: Some(759),
            },
        )
        .map_err(|e| format!("{} repeat {}: {e}", run.config, run.repeat))?;
        checked += 1;
    }
    let agent_trace = agent_trace.ok_or("agent session did not produce a trace")?;
    validate_trace(
        agent_trace,
        TraceLimits {
            cpu_slots: Some(1),
            upload_slots: Some(2),
            require_complete: true,
            expected_docs: Some(30),
        },
    )
    .map_err(|e| format!("agent trace: {e}"))?;
    Ok(format!(
        "{checked} simulator traces and the agent session trace pass the validator"
    ))
}

fn main() -> ExitCode {
    let reference = reference_bench();
    let with_ref = |f: fn(&Reference) -> Outcome| match &reference {
        Ok(r) => f(r),
        Err(e) => Err(format!("reference bench failed: {e}")),
    };
    let c8 = criterion8();
    let agent_trace = c8.as_ref().ok().map(|(_, t)| t.as_slice());
    let results: Vec<(&str, Outcome)> = vec![
        ("control ordering", with_ref(criterion1)),
        ("spline beats random with one core", with_ref(criterion2)),
        ("parity with three cores", with_ref(criterion3)),
        ("link model", criterion4()),
        ("estimator", criterion5()),
        ("operator", criterion6()),
        ("determinism", criterion7()),
        (
            "agent and gateway",
            c8.as_ref().map(|(d, _)| d.clone()).map_err(Clone::clone),
        ),
        (
            "trace validity",
            match &reference {
                Ok(r) => criterion9(r, agent_trace),
                Err(e) => Err(format!("reference bench failed: {e}")),
            },
        ),
    ];
    let mut failed = 0;
    for (n, (name, outcome)) in results.iter().enumerate() {
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", n + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why})", n + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
