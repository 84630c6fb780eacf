//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use semcomm::backend::mock::{
    is_stop_word, mock_attention, mock_distance, mock_target, SplitMix64,
};
use semcomm::backend::{BackendError, FeatureImage, PerceptualMetric};
use semcomm::config::Aggregation;
use semcomm::gateway::stub::{FixtureSet, StubOptions, StubServer, FIXTURE_IMAGE};
use semcomm::gateway::{conformance, decode_image, GatewayClient, GatewayConfig, GatewayError};
use semcomm::metrics::load_report;
use semcomm::policy::{aggregate_attention, select, PolicyContext};
use semcomm::{
    run_session, tokenize, MockBackendConfig, Outcome, PolicyKind, Ports, PromptOrdering,
    SessionConfig, SessionTranscript, TransmissionState,
};
use semcomm_cli::run_cli;
use semcomm_oracles::{generate_scenarios, oracle_greedy, ScenarioSpec};
use serde_json::{json, Value};

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);
type Warp = (&'static str, fn(f64) -> f64);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn greedy_sequence(caption: &str, ports: &Ports, cfg: &MockBackendConfig) -> Vec<usize> {
    let s = tokenize(caption).unwrap();
    let session = SessionConfig {
        policy: PolicyKind::LowestLpips,
        ..SessionConfig::default()
    };
    let ctx = PolicyContext::prepare(
        &s,
        Some(mock_target(caption, cfg).unwrap()),
        ports.clone(),
        session,
    )
    .unwrap();
    let mut state = TransmissionState::new(s);
    while !state.remaining().is_empty() {
        let pick = select(&state, &ctx).unwrap().index;
        state.push(pick).unwrap();
    }
    state.sent().to_vec()
}

fn greedy_oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let spec = ScenarioSpec {
        min_len: 4,
        max_len: 12,
        seed: 2024,
        ..ScenarioSpec::default()
    };
    let captions = generate_scenarios(&spec, 200);
    let mut steps = 0;
    for (k, caption) in captions.iter().enumerate() {
        let cfg = MockBackendConfig::default().with_seed(k as u64);
        let ports = Ports::mock(cfg.clone());
        let ours = greedy_sequence(caption, &ports, &cfg);
        let oracle = oracle_greedy(
            &mock_target(caption, &cfg).unwrap(),
            &tokenize(caption).unwrap(),
            &ports,
            PromptOrdering::SentencePosition,
        );
        ensure(
            ours == oracle,
            format!("scenario {k} {caption:?}: {ours:?} vs oracle {oracle:?}"),
        )?;
        steps += ours.len();
    }
    let elapsed = start.elapsed();
    ensure(
        elapsed < Duration::from_secs(60),
        format!("took {elapsed:?}"),
    )?;
    Ok(format!(
        "200 scenarios, {steps} steps identical, {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn threshold_semantics() -> Verdict {
    let cfg = MockBackendConfig::default();
    let caption = "a cat";
    let target = mock_target(caption, &cfg).unwrap();
    let s = tokenize(caption).unwrap();
    let ports = Ports::mock(cfg);
    let session = SessionConfig {
        policy: PolicyKind::LowestLpips,
        threshold: 0.60,
        ..SessionConfig::default()
    };
    let t = run_session(&target, &s, &ports, &session).map_err(|e| e.to_string())?;
    let full = run_session(
        &target,
        &s,
        &ports,
        &SessionConfig {
            threshold: 0.0,
            ..session.clone()
        },
    )
    .map_err(|e| e.to_string())?;
    ensure(
        full.steps.len() == 2,
        "fixed-budget run should send both words",
    )?;
    let d = t.steps[0].distance;
    ensure(d <= 0.60, format!("step 1 distance {d} above 0.60"))?;
    ensure(
        t.outcome == Outcome::Success,
        format!("outcome {:?}", t.outcome),
    )?;
    ensure(
        t.steps_to_success == Some(1),
        format!("steps_to_success {:?}", t.steps_to_success),
    )?;
    ensure(
        t.steps.len() == 1,
        format!("{} steps recorded", t.steps.len()),
    )?;
    Ok(format!(
        "\"a cat\": sent {:?} at d={d:.6}, halted after 1 step",
        t.steps[0].word
    ))
}

fn write_sweep_config(dir: &Path, captions: &[String], threshold: f64) -> String {
    let scenarios: Vec<Value> = captions.iter().map(|c| json!({ "caption": c })).collect();
    let path = dir.join(format!("sweep_{threshold}.json"));
    let body = json!({
        "backend": "mock",
        "mock": {},
        "session": { "threshold": threshold },
        "scenarios": scenarios,
        "output_dir": format!("out_{threshold}"),
    });
    fs::write(&path, serde_json::to_vec_pretty(&body).unwrap()).unwrap();
    path.to_str().unwrap().to_owned()
}

fn csv_medians(csv: &str) -> Vec<(String, Option<usize>)> {
    csv.lines()
        .skip(1)
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            (cols[0].to_owned(), cols[3].parse().ok())
        })
        .collect()
}

fn policy_ordering() -> Verdict {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = ScenarioSpec {
        seed: 7,
        ..ScenarioSpec::default()
    };
    let captions = generate_scenarios(&spec, 200);

    let mut info = Vec::new();
    let mut verdict = Ok(());
    for threshold in [0.60, 0.2, 0.1] {
        let cfg = write_sweep_config(tmp.path(), &captions, threshold);
        let code = run_cli([
            "semcomm", "sweep", "--config", &cfg, "--seeds", "1", "--jobs", "4",
        ]);
        ensure(code == 0, format!("sweep exited {code}"))?;
        let out = tmp.path().join(format!("out_{threshold}"));
        let csv = fs::read_to_string(out.join("summary.csv")).map_err(|e| e.to_string())?;
        let medians = csv_medians(&csv);
        let get = |name: &str| {
            medians
                .iter()
                .find(|(p, _)| p == name)
                .and_then(|(_, m)| *m)
                .unwrap_or(usize::MAX)
        };
        let (g, m, l) = (
            get("lowest-lpips"),
            get("most-attentive"),
            get("least-attentive"),
        );
        if threshold == 0.60 {
            let mut stop_first = 0;
            for k in 0..captions.len() {
                let text =
                    fs::read_to_string(out.join(format!("s{k:03}_least-attentive_seed0.jsonl")))
                        .map_err(|e| e.to_string())?;
                let t = SessionTranscript::from_jsonl(&text).map_err(|e| e.to_string())?;
                if is_stop_word(&t.steps[0].word) {
                    stop_first += 1;
                }
            }
            let share = stop_first as f64 / captions.len() as f64;
            info.push(format!(
                "tau=0.60 medians {g} <= {m} <= {l}, least-attentive opens on a stop word in {stop_first}/{}",
                captions.len()
            ));
            if !(g <= m && m <= l) {
                verdict = Err(format!("medians {g}, {m}, {l} out of order"));
            } else if share < 0.90 {
                verdict = Err(format!("stop-word share {share:.3} < 0.90"));
            }
        } else {
            info.push(format!("(info tau={threshold}: medians {g}, {m}, {l})"));
        }
    }
    let detail = info.join("; ");
    verdict
        .map(|_| detail.clone())
        .map_err(|e| format!("{e}; {detail}"))
}

fn attention_properties() -> Verdict {
    let spec = ScenarioSpec {
        min_len: 1,
        max_len: 40,
        seed: 99,
        ..ScenarioSpec::default()
    };
    let captions = generate_scenarios(&spec, 1000);
    let mut rng = SplitMix64::new(0x0acc_e971);
    let mut worst: f64 = 0.0;
    for (i, caption) in captions.iter().enumerate() {
        let s = tokenize(caption).unwrap();
        let layers = 1 + (rng.next_u64() % 3) as usize;
        let heads = 1 + (rng.next_u64() % 3) as usize;
        let cfg = MockBackendConfig {
            layers,
            heads,
            ..MockBackendConfig::default()
        }
        .with_seed(rng.next_u64());
        let t = mock_attention(&s, &cfg);
        ensure(
            t.weights().iter().all(|&w| w >= 0.0),
            format!("pair {i}: negative weight"),
        )?;
        for chunk in t.weights().chunks(s.len()) {
            worst = worst.max((chunk.iter().sum::<f64>() - 1.0).abs());
        }
        let m = aggregate_attention(&t, Aggregation::MeanLayersHeads);
        for r in 0..m.len() {
            worst = worst.max((m.row(r).iter().sum::<f64>() - 1.0).abs());
        }
    }
    ensure(worst <= 1e-6, format!("row sum off by {worst:e}"))?;
    Ok(format!("1000 pairs, worst row-sum error {worst:.1e}"))
}

struct Warped(fn(f64) -> f64);

impl PerceptualMetric for Warped {
    fn distance(&self, a: &FeatureImage, b: &FeatureImage) -> Result<f64, BackendError> {
        mock_distance(a, b).map(self.0)
    }
}

fn argmin_invariance() -> Verdict {
    let spec = ScenarioSpec {
        seed: 31,
        ..ScenarioSpec::default()
    };
    let maps: [Warp; 2] = [("d^2", |d| d * d), ("0.5d+0.1", |d| 0.5 * d + 0.1)];
    for (k, caption) in generate_scenarios(&spec, 50).iter().enumerate() {
        let cfg = MockBackendConfig::default().with_seed(k as u64);
        let plain = Ports::mock(cfg.clone());
        let baseline = greedy_sequence(caption, &plain, &cfg);
        for (name, f) in maps {
            let mut ports = plain.clone();
            ports.metric = Some(Arc::new(Warped(f)));
            let warped = greedy_sequence(caption, &ports, &cfg);
            ensure(
                warped == baseline,
                format!("scenario {k} under {name}: {warped:?} vs {baseline:?}"),
            )?;
        }
    }
    Ok("50 scenarios, every step identical under d^2 and 0.5d+0.1".into())
}

fn sweep_determinism() -> Verdict {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let captions = generate_scenarios(
        &ScenarioSpec {
            seed: 5,
            ..ScenarioSpec::default()
        },
        6,
    );
    let cfg = write_sweep_config(tmp.path(), &captions, 0.2);
    let runs = [tmp.path().join("first"), tmp.path().join("second")];
    for dir in &runs {
        let code = run_cli([
            "semcomm",
            "sweep",
            "--config",
            &cfg,
            "--seeds",
            "3",
            "--out",
            dir.to_str().unwrap(),
        ]);
        ensure(code == 0, format!("sweep exited {code}"))?;
    }
    let list = |d: &Path| {
        let mut v: Vec<_> = fs::read_dir(d)
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        v.sort();
        v
    };
    let names = list(&runs[0]);
    ensure(names == list(&runs[1]), "different file sets")?;
    let mut jsonl = 0;
    for name in &names {
        let a = fs::read(runs[0].join(name)).unwrap();
        let b = fs::read(runs[1].join(name)).unwrap();
        ensure(a == b, format!("{name:?} differs"))?;
        if name.to_string_lossy().ends_with(".jsonl") {
            jsonl += 1;
        }
    }
    ensure(jsonl == 6 * 4 * 3, format!("{jsonl} transcripts"))?;
    Ok(format!(
        "{jsonl} JSONL files, summary.csv and plot_data.json byte-identical"
    ))
}

fn load_accounting() -> Verdict {
    let caption = "apple bread cream dates eggsy fruit grape honey icing jelly";
    let s = tokenize(caption).unwrap();
    let word_bytes: usize = s.words().iter().map(|w| w.text.len()).sum();
    ensure(
        s.len() == 10 && word_bytes == 50,
        "fixture must be 10 words, 50 bytes",
    )?;
    let cfg = MockBackendConfig::default();
    let session = SessionConfig {
        policy: PolicyKind::SentenceOrder,
        threshold: 0.0,
        ..SessionConfig::default()
    };
    let t = run_session(
        &mock_target(caption, &cfg).unwrap(),
        &s,
        &Ports::mock(cfg),
        &session,
    )
    .map_err(|e| e.to_string())?;
    ensure(t.steps.len() == 10, "caption not fully transmitted")?;
    let r = load_report(&[t], 512, 512);
    let ratio = r.ratio.ok_or("no ratio")?;
    ensure(r.bytes_raw == 786_432, format!("bytes_raw {}", r.bytes_raw))?;
    ensure(
        r.bytes_semantic == 70,
        format!("bytes_semantic {}", r.bytes_semantic),
    )?;
    ensure(
        (ratio - 11234.742857).abs() <= 1e-6,
        format!("ratio {ratio}"),
    )?;
    Ok(format!(
        "raw {} B, semantic {} B, ratio {ratio:.6}",
        r.bytes_raw, r.bytes_semantic
    ))
}

fn fast_client(url: String, retries: u32, timeout: f64) -> GatewayClient {
    GatewayClient::new(GatewayConfig {
        retries,
        timeout_secs: timeout,
        backoff_secs: 0.01,
        ..GatewayConfig::new(url)
    })
    .unwrap()
}

fn stub_conformance() -> Verdict {
    let stub = StubServer::bundled().map_err(|e| e.to_string())?;
    let client = fast_client(stub.url(), 0, 5.0);
    let fixtures = FixtureSet::bundled();
    let mut replayed = 0;
    for f in &fixtures.fixtures {
        let Some(req) = &f.request else { continue };
        let text = |k: &str| req[k].as_str().unwrap_or_default().to_owned();
        let ok = match f.endpoint.as_str() {
            "/v1/caption" => client
                .remote_caption(&decode_image(&text("image_b64")).unwrap())
                .map(|s| s.source_text() == f.response["caption"].as_str().unwrap())
                .map_err(|e| e.to_string()),
            "/v1/attention" => match client.raw_attention(&text("text")) {
                Ok(r) => Ok(serde_json::to_value(&r).unwrap()["weights"]
                    .as_array()
                    .map(Vec::len)
                    == f.response["weights"].as_array().map(Vec::len)),
                Err(e) => Err(e.to_string()),
            },
            "/v1/generate" => {
                let expected_ok = f.response.get("width").is_some();
                match client.remote_generate(&text("prompt"), req["seed"].as_u64().unwrap()) {
                    Ok(FeatureImage::Encoded { bytes, .. }) => Ok(expected_ok
                        && bytes
                            == decode_image(f.response["image_b64"].as_str().unwrap()).unwrap()),
                    Ok(_) => Ok(false),
                    Err(GatewayError::MalformedResponse(_)) => Ok(!expected_ok),
                    Err(e) => Err(e.to_string()),
                }
            }
            "/v1/distance" => {
                let a = decode_image(&text("image_a_b64")).unwrap();
                let b = decode_image(&text("image_b_b64")).unwrap();
                let raw = f.response["lpips"].as_f64().unwrap();
                match client.remote_distance(&a, &b) {
                    Ok(d) => Ok((d - raw.clamp(0.0, 1.0)).abs() < 1e-12 && (raw - d).abs() <= 1e-3),
                    Err(GatewayError::InvalidMetric(v)) => {
                        Ok(v == raw && !(-1e-3..=1.0 + 1e-3).contains(&raw))
                    }
                    Err(e) => Err(e.to_string()),
                }
            }
            other => Err(format!("unknown endpoint {other}")),
        };
        ensure(
            ok == Ok(true),
            format!("fixture {} {req}: {ok:?}", f.endpoint),
        )?;
        replayed += 1;
    }
    let report = conformance::run(&stub.url()).map_err(|e| e.to_string())?;
    ensure(report.passed(), format!("conformance:\n{report}"))?;

    let failing = StubServer::start(
        FixtureSet::bundled(),
        StubOptions {
            always_status: Some(503),
            ..StubOptions::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let err = fast_client(failing.url(), 2, 5.0).remote_caption(FIXTURE_IMAGE);
    ensure(
        matches!(err, Err(GatewayError::HttpStatus { code: 503, .. })) && failing.total_hits() == 3,
        format!("503 stub: {err:?} after {} attempts", failing.total_hits()),
    )?;

    let slow = StubServer::start(
        FixtureSet::bundled(),
        StubOptions {
            delay: Some(Duration::from_millis(500)),
            ..StubOptions::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let err = fast_client(slow.url(), 0, 0.1).remote_caption(FIXTURE_IMAGE);
    ensure(
        matches!(err, Err(GatewayError::Timeout)),
        format!("slow stub: {err:?}"),
    )?;

    Ok(format!(
        "{replayed} fixtures round-trip, {} conformance checks pass, 503 retried 3x, timeout reported",
        report.checks.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("greedy oracle equivalence", greedy_oracle_equivalence),
        ("threshold semantics", threshold_semantics),
        ("policy ordering", policy_ordering),
        ("attention tensor properties", attention_properties),
        ("argmin invariance", argmin_invariance),
        ("sweep determinism", sweep_determinism),
        ("load accounting", load_accounting),
        ("wire protocol stub conformance", stub_conformance),
    ];
    // Quiet the default panic output; panics are reported as failures.
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
