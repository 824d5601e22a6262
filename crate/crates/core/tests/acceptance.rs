//! Acceptance gate. Each criterion prints one PASS or FAIL line; the process
//! exits non-zero if any criterion fails.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{knn_instance, oracle_knn, oracle_pearson, random_frame, square_spec, to_samples};
use sonopipe::classifier::{knn_fit, stratified_folds, ConfusionMatrix, CvReport, LabeledSample};
use sonopipe::frame::{Frame, FrameSource, SourceError};
use sonopipe::kinematics::N_JOINTS;
use sonopipe::pearson;
use sonopipe::pipeline::train::{evaluate, extract_samples, train, EvalReport};
use sonopipe::pipeline::{
    load_training_set, Debouncer, Metrics, Pipeline, PipelineConfig, Segment, SourceClock, SourceConfig,
};
use sonopipe::streamwire::{decode_message, encode_message, PoseMessage, StreamServer};
use sonopipe::synth::{Phantom, PhantomSpec};
use sonopipe::templates::{GestureLabel, TemplateStore};

/// Cross-validated accuracy at sigma 0.15, frozen after the first run: 77 of 80 correct.
const FROZEN_ACCURACY_015: f64 = 77.0 / 80.0;
/// Same dataset with rest removed: 59 of 60 correct.
const FROZEN_REST_EXCLUDED_015: f64 = 59.0 / 60.0;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, started: Instant, detail: String) -> Outcome {
    let took = started.elapsed();
    check(
        took < limit,
        format!("{detail}; {:.2} s of {} s allowed", took.as_secs_f64(), limit.as_secs()),
    )
}

fn correlation_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let side = 2 + i * 62 / 999;
        let (w, h) = (side, rng.gen_range(2..=64));
        let a = random_frame(&mut rng, w, h);
        let b = if i % 2 == 0 {
            let px = a
                .pixels()
                .iter()
                .map(|&v| (0.7 * v + 0.3 * rng.gen::<f64>()).clamp(0.0, 1.0))
                .collect();
            Frame::new(w, h, px).unwrap()
        } else {
            random_frame(&mut rng, w, h)
        };
        let got = pearson(&a, &b).map_err(|e| e.to_string())?;
        worst = worst.max((got - oracle_pearson(a.pixels(), b.pixels()).unwrap()).abs());
    }
    if worst > 1e-12 {
        return Err(format!("max |r - oracle| = {worst:e} over 1000 frames"));
    }
    within(
        Duration::from_secs(10),
        started,
        format!("max |r - oracle| = {worst:e} over 1000 frames"),
    )
}

fn correlation_invariances() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1A7);
    let cases = 2000;
    let mut worst_affine: f64 = 0.0;
    for case in 0..cases {
        let (w, h) = (rng.gen_range(2..=24), rng.gen_range(2..=24));
        let a = random_frame(&mut rng, w, h);
        let b = random_frame(&mut rng, w, h);
        let r = pearson(&a, &b).unwrap();
        if r.to_bits() != pearson(&b, &a).unwrap().to_bits() {
            return Err(format!("case {case}: asymmetric"));
        }
        let scale = rng.gen_range(0.05..=1.0);
        let shift = rng.gen_range(0.0..=1.0 - scale);
        let moved = Frame::new(w, h, b.pixels().iter().map(|v| scale * v + shift).collect()).unwrap();
        worst_affine = worst_affine.max((pearson(&a, &moved).unwrap() - r).abs());
        if pearson(&a, &a).unwrap() != 1.0 {
            return Err(format!("case {case}: self-correlation {}", pearson(&a, &a).unwrap()));
        }
        let anti = Frame::new(w, h, a.pixels().iter().map(|v| 1.0 - v).collect()).unwrap();
        if pearson(&a, &anti).unwrap() != -1.0 {
            return Err(format!("case {case}: anti-image {}", pearson(&a, &anti).unwrap()));
        }
    }
    check(
        worst_affine <= 1e-9,
        format!("{cases} cases; symmetry exact, self 1, anti -1, max affine drift {worst_affine:e}"),
    )
}

fn knn_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x4E4E);
    for trial in 0..10_000 {
        let inst = knn_instance(&mut rng);
        let model = knn_fit(to_samples(&inst.samples), inst.k).unwrap();
        let got = model.predict(&inst.query).ordinal();
        let want = oracle_knn(&inst.samples, inst.k, &inst.query);
        if got != want {
            return Err(format!("trial {trial}: predicted {got}, oracle {want}"));
        }
    }
    // Hand-built ties: equidistant neighbours and split votes.
    let tied = to_samples(&[
        ([0.3, 0.0, 0.0, 0.0], 3),
        ([0.0, 0.3, 0.0, 0.0], 2),
        ([0.0, 0.0, 0.9, 0.0], 0),
    ]);
    if knn_fit(tied, 2).unwrap().predict(&[0.0; 4]) != GestureLabel::WristPronation {
        return Err("tied vote not broken toward the lowest ordinal".into());
    }
    within(
        Duration::from_secs(30),
        started,
        "10000 instances identical to brute force".into(),
    )
}

fn desk_config(sigma: f64) -> PipelineConfig {
    PipelineConfig {
        synth: square_spec(42, 64, sigma),
        width: 64,
        height: 64,
        per_class: 20,
        k: 3,
        folds: 5,
        seed: 42,
        ..PipelineConfig::default()
    }
}

struct Desk {
    store: TemplateStore,
    samples: Vec<LabeledSample>,
    report: EvalReport,
}

fn desk_eval(sigma: f64) -> Desk {
    let config = desk_config(sigma);
    let data = load_training_set(&config).unwrap();
    let outcome = train(&data, config.templates_per_gesture, config.k, "acceptance").unwrap();
    let samples = extract_samples(&data, &outcome.store, "acceptance").unwrap();
    let report = evaluate(&samples, config.k, config.folds, config.seed).unwrap();
    Desk {
        store: outcome.store,
        samples,
        report,
    }
}

/// Cross-validation rebuilt from the oracles: two-pass correlation against the
/// templates and exhaustive kNN within each fold.
fn oracle_accuracy(samples: &[LabeledSample], k: usize, folds: usize, seed: u64) -> f64 {
    let partition = stratified_folds(samples, folds, seed).unwrap();
    let mut correct = 0;
    for held_out in &partition {
        let train: Vec<([f64; 4], usize)> = (0..samples.len())
            .filter(|i| !held_out.contains(i))
            .map(|i| (samples[i].features, samples[i].label.ordinal()))
            .collect();
        for &i in held_out {
            if oracle_knn(&train, k, &samples[i].features) == samples[i].label.ordinal() {
                correct += 1;
            }
        }
    }
    correct as f64 / samples.len() as f64
}

fn oracle_features(desk: &Desk, frames: &[(GestureLabel, Frame)]) -> Vec<LabeledSample> {
    frames
        .iter()
        .map(|(label, f)| {
            let r = GestureLabel::ALL.map(|t| oracle_pearson(f.pixels(), desk.store.get(t).image.pixels()).unwrap());
            LabeledSample::new(r, *label)
        })
        .collect()
}

fn perfect_at_low_noise() -> Outcome {
    let started = Instant::now();
    let desk = desk_eval(0.01);
    let acc = desk.report.full.accuracy;
    if acc != 1.0 {
        return Err(format!("accuracy {acc}"));
    }
    within(
        Duration::from_secs(60),
        started,
        format!("5-fold accuracy {acc} at sigma 0.01"),
    )
}

fn above_ninety_at_015(desk: &Desk, frames: &[(GestureLabel, Frame)], started: Instant) -> Outcome {
    let acc = desk.report.full.accuracy;
    let oracle = oracle_accuracy(&oracle_features(desk, frames), 3, 5, 42);
    let detail = format!("accuracy {acc:.4} (frozen {FROZEN_ACCURACY_015:.4}, oracle {oracle:.4})");
    if !(acc > 0.90 && acc == FROZEN_ACCURACY_015 && oracle == FROZEN_ACCURACY_015) {
        return Err(detail);
    }
    within(Duration::from_secs(60), started, detail)
}

fn rest_exclusion(desk: &Desk) -> Outcome {
    let full = desk.report.full.accuracy;
    let without = desk.report.rest_excluded.accuracy;
    check(
        without >= full && without == FROZEN_REST_EXCLUDED_015,
        format!("without rest {without:.4} >= with rest {full:.4}"),
    )
}

fn accounts(report: &CvReport, samples: &[LabeledSample]) -> Result<(), String> {
    let partition = stratified_folds(samples, report.folds, report.seed).unwrap();
    let mut summed = ConfusionMatrix::default();
    for (fold, m) in partition.iter().zip(&report.fold_confusion) {
        for label in GestureLabel::ALL {
            let want = fold.iter().filter(|&&i| samples[i].label == label).count() as u64;
            if m.row_sum(label) != want {
                return Err(format!("{label} row sums to {} in a fold of {want}", m.row_sum(label)));
            }
        }
        for t in GestureLabel::ALL {
            for p in GestureLabel::ALL {
                for _ in 0..m.counts[t.ordinal()][p.ordinal()] {
                    summed.record(t, p);
                }
            }
        }
    }
    for label in GestureLabel::ALL {
        let want = samples.iter().filter(|s| s.label == label).count() as u64;
        if report.confusion.row_sum(label) != want {
            return Err(format!(
                "aggregate {label} row sums to {}, expected {want}",
                report.confusion.row_sum(label)
            ));
        }
    }
    if summed != report.confusion {
        return Err("aggregate differs from the sum of fold matrices".into());
    }
    Ok(())
}

fn confusion_accounting(desk: &Desk) -> Outcome {
    accounts(&desk.report.full, &desk.samples)?;
    let without: Vec<LabeledSample> = desk
        .samples
        .iter()
        .filter(|s| s.label != GestureLabel::Rest)
        .cloned()
        .collect();
    accounts(&desk.report.rest_excluded, &without)?;
    let matrices = 2 * (desk.report.full.fold_confusion.len() + 1);
    Ok(format!("{matrices} matrices balance exactly"))
}

struct Preloaded {
    frames: std::vec::IntoIter<Frame>,
}

impl FrameSource for Preloaded {
    fn next_frame(&mut self) -> Result<Option<Frame>, SourceError> {
        Ok(self.frames.next())
    }
}

fn full_size_artifacts() -> (TemplateStore, sonopipe::KnnModel, PhantomSpec) {
    let spec = PhantomSpec::default();
    let config = PipelineConfig {
        synth: spec,
        per_class: 12,
        ..PipelineConfig::default()
    };
    let data = load_training_set(&config).unwrap();
    let outcome = train(&data, config.templates_per_gesture, config.k, "acceptance").unwrap();
    (outcome.store, outcome.model, spec)
}

fn throughput(store: &TemplateStore, model: &sonopipe::KnnModel, spec: PhantomSpec, out: PathBuf) -> Outcome {
    let phantom = Phantom::new(spec).unwrap();
    let clean = GestureLabel::ALL.map(|l| phantom.render_clean(l, 1.0).unwrap());
    let frames: Vec<Frame> = (0..500u64)
        .map(|i| {
            let label = GestureLabel::ALL[(i / 125) as usize];
            phantom
                .add_noise(&clean[label.ordinal()], 5000 + i)
                .unwrap()
                .with_meta(0, i)
        })
        .collect();
    let config = PipelineConfig {
        queue_capacity: 512,
        tcp_port: None,
        ws_port: None,
        metrics_out: Some(out.clone()),
        ..PipelineConfig::default()
    };
    let source = Preloaded {
        frames: frames.into_iter(),
    };
    let pipeline = Pipeline::with_source(
        config,
        store.clone(),
        model.clone(),
        Box::new(source),
        SourceClock::External,
        Instant::now(),
    )
    .map_err(|e| e.to_string())?;
    let metrics = pipeline.run().map_err(|e| e.to_string())?;
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&out).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let reported = json["fps"].as_f64().ok_or("metrics JSON lacks fps")?;
    check(
        metrics.frames_processed == 500 && reported >= 35.0,
        format!(
            "{} frames of 480x480 at {reported:.1} fps (compute-only {:.1} fps), written to {}",
            metrics.frames_processed,
            metrics.compute_fps,
            out.display()
        ),
    )
}

fn latency(store: &TemplateStore, model: &sonopipe::KnnModel, spec: PhantomSpec) -> Outcome {
    let script = GestureLabel::ALL
        .iter()
        .map(|&gesture| Segment { gesture, frames: 125 })
        .collect();
    let config = PipelineConfig {
        source: SourceConfig::Synthetic {
            script: Some(script),
            rate_hz: 30.0,
            ramp_s: None,
        },
        synth: spec,
        tcp_port: None,
        ws_port: None,
        ..PipelineConfig::default()
    };
    let pipeline = Pipeline::with_artifacts(config, store.clone(), model.clone()).map_err(|e| e.to_string())?;
    let sub = pipeline.server().subscribe_local(1024);
    let metrics: Metrics = pipeline.run().map_err(|e| e.to_string())?;
    let mut received = 0;
    while sub.try_recv_line().is_some() {
        received += 1;
    }
    let e2e = metrics.end_to_end;
    let (p50, p99) = (e2e.p50_us as f64 / 1000.0, e2e.p99_us as f64 / 1000.0);
    check(
        metrics.frames_in == 500 && received == metrics.messages_published && p99 < 600.0 && p50 < 50.0,
        format!(
            "{} frames in, {received} published; median {p50:.1} ms, p99 {p99:.1} ms, {} dropped",
            metrics.frames_in, metrics.frames_dropped
        ),
    )
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-7 * a.abs().max(b.abs())
}

fn wire() -> Outcome {
    let golden_path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../docs/wire/golden.ndjson");
    let golden = std::fs::read(&golden_path).map_err(|e| e.to_string())?;
    if encode_message(&PoseMessage::canonical_rest()).unwrap() != golden {
        return Err("canonical rest encoding differs from the golden file".into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x3172E);
    let trips = 10_000;
    for i in 0..trips {
        let mut real = || match rng.gen_range(0..3) {
            0 => rng.gen_range(-1.0..=1.0),
            1 => rng.gen_range(-1e4..1e4),
            _ => f64::from_bits(rng.gen::<u64>() & !(0x7ffu64 << 52) | (rng.gen_range(900u64..1100) << 52)),
        };
        let m = PoseMessage {
            seq: i,
            timestamp_us: i * 33_333,
            gesture: GestureLabel::ALL[(i % 4) as usize],
            confidence: real(),
            features: [real(), real(), real(), real()],
            joints: [0.0; N_JOINTS].map(|_| real()),
        };
        let back = decode_message(&encode_message(&m).unwrap()).map_err(|e| e.to_string())?;
        let reals_ok = close(back.confidence, m.confidence)
            && back.features.iter().zip(&m.features).all(|(a, b)| close(*a, *b))
            && back.joints.iter().zip(&m.joints).all(|(a, b)| close(*a, *b));
        if !(reals_ok && back.seq == m.seq && back.timestamp_us == m.timestamp_us && back.gesture == m.gesture) {
            return Err(format!("round trip {i} lost precision: {m:?} -> {back:?}"));
        }
    }

    let server = StreamServer::local();
    let sub = server.subscribe_local(8);
    for seq in 0..100 {
        server
            .publish(&PoseMessage {
                seq,
                ..PoseMessage::canonical_rest()
            })
            .unwrap();
    }
    let mut seqs = Vec::new();
    while let Some(line) = sub.try_recv_line() {
        seqs.push(decode_message(&line).unwrap().seq);
    }
    for seq in 100..110 {
        server
            .publish(&PoseMessage {
                seq,
                ..PoseMessage::canonical_rest()
            })
            .unwrap();
        seqs.push(
            sub.recv(Duration::from_secs(1))
                .ok_or("live message missing")?
                .unwrap()
                .seq,
        );
    }
    let increasing = seqs.windows(2).all(|w| w[0] < w[1]);
    let stale = seqs.iter().filter(|&&s| s < 100).count();
    check(
        increasing && stale <= 8 && sub.dropped() == 92 && sub.dropped() + seqs.len() as u64 == 110,
        format!("golden identical, {trips} round trips within 1e-7, slow subscriber got {stale} stale + 10 live, {} dropped", sub.dropped()),
    )
}

fn debounce() -> Outcome {
    let mut transitions = 0;
    for truth in GestureLabel::ALL {
        let wrong = GestureLabel::ALL[(truth.ordinal() + 2) % 4];
        let mut d = Debouncer::new(5);
        for _ in 0..5 {
            d.push(truth);
        }
        let before = d.changes();
        for i in 0..1000 {
            d.push(if i % 20 == 7 { wrong } else { truth });
        }
        transitions += d.changes() - before;
        if d.current() != truth {
            return Err(format!("{truth}: output ended on {}", d.current()));
        }
    }
    check(
        transitions == 0,
        format!("{transitions} transitions from 50 flips per gesture over 1000 frames, M=5"),
    )
}

fn main() {
    let mut failures = 0;
    let mut report = |name: &str, started: Instant, outcome: Outcome| {
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.2} s]"),
            Err(detail) => {
                failures += 1;
                println!("FAIL {name}: {detail} [{secs:.2} s]");
            }
        }
    };

    let t = Instant::now();
    report("correlation oracle", t, correlation_oracle());
    let t = Instant::now();
    report("correlation invariances", t, correlation_invariances());
    let t = Instant::now();
    report("knn oracle", t, knn_oracle());
    let t = Instant::now();
    report("100% at sigma 0.01", t, perfect_at_low_noise());

    let t = Instant::now();
    let desk = desk_eval(0.15);
    let frames = load_training_set(&desk_config(0.15)).unwrap();
    report(">90% at sigma 0.15", t, above_ninety_at_015(&desk, &frames, t));
    let t = Instant::now();
    report("rest exclusion", t, rest_exclusion(&desk));
    let t = Instant::now();
    report("confusion accounting", t, confusion_accounting(&desk));

    let (store, model, spec) = full_size_artifacts();
    let out = std::env::temp_dir().join(format!("sonopipe-acceptance-{}", std::process::id()));
    let t = Instant::now();
    report(
        "throughput",
        t,
        throughput(&store, &model, spec, out.join("metrics.json")),
    );
    let t = Instant::now();
    report("latency", t, latency(&store, &model, spec));
    let _ = std::fs::remove_dir_all(&out);

    let t = Instant::now();
    report("wire golden", t, wire());
    let t = Instant::now();
    report("debounce", t, debounce());

    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
