//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use thinktank::logfile;
use thinktank::sim::{run_scenario, ScenarioSpec};
use thinktank_core::analyzer::{CanonicalKey, Insight, MockAnalyzer};
use thinktank_core::domain::{ForecastQuestion, InsightId, ParticipantId, Side, SubgroupId};
use thinktank_core::forecast::{finalize, Pick};
use thinktank_core::matching::{challenge_score, InsightEntry, MatchingEngine};
use thinktank_core::replay::{replay, LogProjection};
use thinktank_core::sentiment::{aggregate, weighted_mean};
use thinktank_core::session::{Event, EventRecord, SessionConfig, SessionEngine};
use thinktank_core::stats::{binomial_p, roi};
use thinktank_core::SupportVector;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn close(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol
}

/// Runs `thinktank analyze --format json` on the table fixture.
fn analyze_fixture() -> Result<(Value, Duration), String> {
    let table = fixtures().join("table");
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_thinktank"))
        .args(["analyze", "--format", "json", "--logs"])
        .arg(&table)
        .arg("--outcomes")
        .arg(table.join("outcomes.csv"))
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure!(
        out.status.success(),
        "analyze failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    Ok((v, elapsed))
}

fn row<'a>(report: &'a Value, label: &str) -> Result<&'a Value, String> {
    report["rows"]
        .as_array()
        .and_then(|rows| rows.iter().find(|r| r["label"] == label))
        .ok_or_else(|| format!("no row {label:?}"))
}

/// `(label, picks, wins, losses, accuracy %, roi %, p-value)`
type Expected = (&'static str, u64, u64, u64, f64, f64, f64);

fn check_rows(report: &Value, expected: &[Expected]) -> Result<(), String> {
    for &(label, picks, wins, losses, acc, roi, p) in expected {
        let r = row(report, label)?;
        let got = |k: &str| r[k].as_f64().unwrap_or(f64::NAN);
        ensure!(
            r["picks"] == picks && r["wins"] == wins && r["losses"] == losses,
            "{label}: record {}-{} of {}",
            r["wins"],
            r["losses"],
            r["picks"]
        );
        ensure!(
            close(got("accuracy"), acc, 0.05),
            "{label}: accuracy {}",
            got("accuracy")
        );
        ensure!(close(got("roi"), roi, 0.05), "{label}: roi {}", got("roi"));
        ensure!(
            close(got("p_value"), p, 0.001),
            "{label}: p {}",
            got("p_value")
        );
    }
    Ok(())
}

fn pick_record_report() -> Check {
    let (report, elapsed) = analyze_fixture()?;
    ensure!(report["scored"] == 50, "scored {}", report["scored"]);
    check_rows(
        &report,
        &[
            ("All Picks", 50, 31, 19, 62.0, 18.4, 0.059),
            ("Favorite Picks", 39, 23, 16, 59.0, 12.6, 0.168),
            ("Underdog Picks", 11, 8, 3, 72.7, 38.8, 0.113),
        ],
    )?;
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("50 picks in {} ms", elapsed.as_millis()))
}

fn rate_cohort_report() -> Check {
    let (report, _) = analyze_fixture()?;
    check_rows(
        &report,
        &[
            ("Lower 25%", 12, 5, 7, 41.7, -20.5, 0.806),
            ("Upper 75%", 38, 26, 12, 68.4, 30.6, 0.017),
        ],
    )?;
    Ok(format!(
        "cutoff {} chars/min/participant",
        report["rate_cutoff"]
    ))
}

fn profit_identity() -> Check {
    let summary = roi(31, 19, 100.0).map_err(|e| e.to_string())?;
    // 31 wins at 100/110 less 19 stakes lost.
    let oracle = 31.0 * 100.0 * 100.0 / 110.0 - 19.0 * 100.0;
    ensure!(
        close(summary.profit, oracle, 1e-9),
        "profit {} vs {oracle}",
        summary.profit
    );
    ensure!(
        close(summary.profit, 918.0, 0.5),
        "profit {}",
        summary.profit
    );
    ensure!(
        close(summary.percent(), 18.4, 0.05),
        "roi {}%",
        summary.percent()
    );
    let (report, _) = analyze_fixture()?;
    let cli = row(&report, "All Picks")?["profit"]
        .as_f64()
        .unwrap_or(f64::NAN);
    ensure!(close(cli, summary.profit, 1e-6), "report profit {cli}");
    Ok(format!("${:.2}", summary.profit))
}

fn choose(n: u64, k: u64) -> BigUint {
    let mut c = BigUint::one();
    for i in 0..k {
        c = c * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    c
}

fn exact_half_tail(n: u64, k: u64) -> f64 {
    let mut total = BigUint::zero();
    for i in k..=n {
        total += choose(n, i);
    }
    BigRational::new(total.into(), BigUint::from(2u8).pow(n as u32).into())
        .to_f64()
        .unwrap_or(f64::NAN)
}

fn exact_binomial() -> Check {
    let mut worst: f64 = 0.0;
    for n in 0..=64u64 {
        for k in 0..=n {
            let err = (binomial_p(n, k, 0.5) - exact_half_tail(n, k)).abs();
            worst = worst.max(err);
            ensure!(err <= 1e-9, "n={n} k={k} off by {err}");
        }
    }
    ensure!(binomial_p(11, 8, 0.5) == 232.0 / 2048.0, "n=11 k=8");
    ensure!(binomial_p(12, 5, 0.5) == 3302.0 / 4096.0, "n=12 k=5");
    Ok(format!("max error {worst:e}"))
}

fn scale_mean(p: &[f64; 4]) -> f64 {
    -2.0 * p[0] - p[1] + p[2] + 2.0 * p[3]
}

fn random_profile(rng: &mut impl Rng) -> [f64; 4] {
    let mut p = [0.0; 4];
    for x in &mut p {
        // Occasional exact zeros exercise the boundary.
        *x = if rng.gen_bool(0.1) {
            0.0
        } else {
            rng.gen::<f64>()
        };
    }
    let sum: f64 = p.iter().sum();
    if sum == 0.0 {
        return [0.25; 4];
    }
    p.map(|x| x / sum)
}

fn weighted_mean_properties() -> Check {
    for (p, want) in [
        ([0.25, 0.25, 0.25, 0.25], 0.0),
        ([1.0, 0.0, 0.0, 0.0], -2.0),
        ([0.4, 0.2, 0.3, 0.1], -0.5),
    ] {
        let got = weighted_mean(p).map_err(|e| e.to_string())?;
        ensure!(close(got, want, 1e-12), "{p:?} gave {got}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let n = rng.gen_range(1..12);
        let profiles: Vec<[f64; 4]> = (0..n).map(|_| random_profile(&mut rng)).collect();
        let vectors: Vec<SupportVector> = profiles
            .iter()
            .map(|p| SupportVector::new(*p).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        let agg = aggregate(&vectors, None).map_err(|e| e.to_string())?;
        let mean_of_means = profiles.iter().map(scale_mean).sum::<f64>() / n as f64;
        ensure!(
            close(agg.weighted_mean(), mean_of_means, 1e-9),
            "linearity failed for {profiles:?}"
        );
        let p = profiles[0];
        let m = weighted_mean(p).map_err(|e| e.to_string())?;
        ensure!((-2.0..=2.0).contains(&m), "{p:?} out of bounds: {m}");
        let mirrored = [p[3], p[2], p[1], p[0]];
        let mm = weighted_mean(mirrored).map_err(|e| e.to_string())?;
        ensure!(close(mm, -m, 1e-12), "mirror of {p:?}");
    }
    for (i, extreme) in [(0, -2.0), (3, 2.0)] {
        let mut near = [0.0; 4];
        near[i] = 1.0 - 1e-6;
        near[if i == 0 { 1 } else { 2 }] = 1e-6;
        let m = weighted_mean(near).map_err(|e| e.to_string())?;
        ensure!(
            m != extreme && close(m, extreme, 1e-5),
            "extreme without unit mass: {m}"
        );
    }

    let (mut a, mut b, mut t) = (0u32, 0u32, 0u32);
    for _ in 0..1_000_000 {
        let p = random_profile(&mut rng);
        let f = finalize(p, "q".into()).map_err(|e| format!("{p:?}: {e}"))?;
        let w = scale_mean(&p);
        let want = if w < -0.08 {
            Pick::A
        } else if w > 0.08 {
            Pick::B
        } else {
            Pick::None
        };
        // Values within rounding of the band edge may fall either way.
        if (w.abs() - 0.08).abs() > 1e-12 {
            ensure!(f.pick == want, "{p:?}: wcf {w} gave {:?}", f.pick);
        }
        ensure!(
            f.is_tossup == (f.pick == Pick::None) && f.risk_points.is_some() != f.is_tossup,
            "{p:?}: inconsistent forecast {f:?}"
        );
        match f.pick {
            Pick::A => a += 1,
            Pick::B => b += 1,
            Pick::None => t += 1,
        }
    }
    Ok(format!("1e6 profiles: {a} A, {b} B, {t} toss-up"))
}

/// Replays routing decisions from a log against an independent exposure
/// ledger. Returns the number of routed insights.
fn check_novelty(log: &[EventRecord]) -> Result<usize, String> {
    let mut ledger: BTreeSet<(usize, SubgroupId, CanonicalKey)> = BTreeSet::new();
    let mut origin: BTreeMap<(usize, CanonicalKey), BTreeSet<SubgroupId>> = BTreeMap::new();
    let mut routed = 0;
    for rec in log {
        match &rec.event {
            Event::InsightRegistered { round, insight, .. } => {
                let g = insight.origin_subgroup.clone();
                ledger.insert((*round, g.clone(), insight.canonical_key));
                origin
                    .entry((*round, insight.canonical_key))
                    .or_default()
                    .insert(g);
            }
            Event::InsightRouted {
                round,
                subgroup,
                canonical_key,
                ..
            } => {
                ensure!(
                    ledger.insert((*round, subgroup.clone(), *canonical_key)),
                    "record {}: {canonical_key:?} routed to {subgroup} twice or back to its origin",
                    rec.seq
                );
                ensure!(
                    !origin
                        .get(&(*round, *canonical_key))
                        .is_some_and(|o| o.contains(subgroup)),
                    "record {}: routed to origin",
                    rec.seq
                );
                routed += 1;
            }
            _ => {}
        }
    }
    Ok(routed)
}

fn random_scenario(seed: u64, rng: &mut impl Rng) -> ScenarioSpec {
    let lo = rng.gen_range(0.0..0.8);
    let mut spec = ScenarioSpec::new(
        rng.gen_range(2..=24),
        rng.gen_range(0.0..=1.0),
        lo,
        rng.gen_range(lo..=1.0),
        seed,
    );
    spec.questions = vec![ForecastQuestion::new("g1", "Celtics", "Knicks", -3.5)];
    spec.message_rate = rng.gen_range(1.0..8.0);
    spec.persuadable = rng.gen_bool(0.5);
    spec.overrides.target_subgroup_size = Some(rng.gen_range(2..=6));
    spec.overrides.agent_min_gap_ms = Some(rng.gen_range(5..=30) * 1_000);
    spec.overrides.round_duration_s = Some(rng.gen_range(60..=300));
    spec
}

/// Registers `m` insights in the first seconds of a round and checks that
/// every subgroup has seen every insight by the end.
fn full_mixing_case(seed: u64, rng: &mut impl Rng) -> Result<(), String> {
    let duration_s = 300u32;
    let mut config = SessionConfig::new(vec![ForecastQuestion {
        round_duration: duration_s,
        ..ForecastQuestion::new("g1", "Celtics", "Knicks", -3.5)
    }]);
    config.seed = seed;
    config.target_subgroup_size = rng.gen_range(2..=3);
    let gap = config.agent_min_gap_ms;
    let n = rng.gen_range(4..=9);
    let (mut e, _) = SessionEngine::create("mix", config, 0).map_err(|e| e.to_string())?;
    let ids: Vec<ParticipantId> = (0..n).map(|i| ParticipantId(format!("p{i}"))).collect();
    for id in &ids {
        e.join(id.clone(), id.0.clone(), 0)
            .map_err(|e| e.to_string())?;
    }
    e.start_round(0, 1_000).map_err(|e| e.to_string())?;
    let max_m = (u64::from(duration_s) * 1_000 / gap) as usize;
    let m = rng.gen_range(1..=max_m);
    let mut mock = MockAnalyzer::default();
    for j in 0..m {
        let side = if rng.gen_bool(0.5) { "A" } else { "B" };
        let text = format!("[pick:{side}][conf:0.7] reason number {j}");
        e.ingest_chat(&ids[j % n], &text, 1_100 + 100 * j as u64, &mut mock)
            .map_err(|e| e.to_string())?;
    }
    e.advance_to(1_000 + u64::from(duration_s) * 1_000);
    let outcome = e.outcomes().first().ok_or("round did not finalize")?;
    ensure!(e.thinktanks().len() >= 2, "only one subgroup");
    let registry = outcome.matching.registry.entries();
    ensure!(
        registry.len() == m,
        "{} insights registered, expected {m}",
        registry.len()
    );
    for tank in e.thinktanks() {
        for entry in registry {
            ensure!(
                outcome
                    .matching
                    .ledger
                    .is_exposed(&tank.id, entry.insight.canonical_key),
                "seed {seed}: {} never reached {} ({m} insights)",
                entry.insight.id,
                tank.id
            );
        }
    }
    Ok(())
}

fn novelty_and_mixing() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let mut routed = 0;
    for seed in 0..200 {
        let spec = random_scenario(seed, &mut rng);
        let log = run_scenario(&spec).map_err(|e| format!("seed {seed}: {e}"))?;
        routed += check_novelty(&log).map_err(|e| format!("seed {seed}: {e}"))?;
    }
    ensure!(routed > 0, "no insights were routed");
    for seed in 0..50 {
        full_mixing_case(seed, &mut rng)?;
    }
    Ok(format!("200 sessions, {routed} routings; 50 mixing cases"))
}

fn oracle_pick<'a>(candidates: &[&'a InsightEntry], lean: f64) -> Option<&'a InsightEntry> {
    candidates.iter().copied().reduce(|best, e| {
        let key = |x: &InsightEntry| {
            (
                challenge_score(&x.insight, lean),
                x.insight.conviction,
                std::cmp::Reverse(x.share_count),
                std::cmp::Reverse(x.index),
            )
        };
        if key(e).partial_cmp(&key(best)) == Some(std::cmp::Ordering::Greater) {
            e
        } else {
            best
        }
    })
}

fn selector_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut decisions = 0;
    for _ in 0..1000 {
        let groups: Vec<SubgroupId> = (1..=rng.gen_range(1..=8))
            .map(|i| format!("g{i}").into())
            .collect();
        let mut dme = MatchingEngine::new();
        for i in 0..rng.gen_range(0..=50) {
            let origin = groups[rng.gen_range(0..groups.len())].clone();
            let side = if rng.gen_bool(0.5) { Side::A } else { Side::B };
            let reason = format!("r{}", rng.gen_range(0..30));
            let conviction = f64::from(rng.gen_range(0..4u8)) / 4.0;
            dme.register_insight(&Insight::new(
                InsightId(format!("i{i}")),
                side,
                vec![reason],
                conviction,
                origin,
            ));
        }
        let keys: Vec<CanonicalKey> = dme
            .registry
            .entries()
            .iter()
            .map(|e| e.insight.canonical_key)
            .collect();
        if !keys.is_empty() {
            for _ in 0..rng.gen_range(0..15) {
                let g = groups[rng.gen_range(0..groups.len())].clone();
                dme.record_share(&g, keys[rng.gen_range(0..keys.len())]);
            }
        }
        for g in &groups {
            dme.prevailing
                .set(g.clone(), f64::from(rng.gen_range(-4..=4i8)) / 2.0);
        }
        for g in &groups {
            let candidates: Vec<&InsightEntry> = dme
                .registry
                .entries()
                .iter()
                .filter(|e| {
                    e.insight.origin_subgroup != *g
                        && !dme.ledger.is_exposed(g, e.insight.canonical_key)
                })
                .collect();
            let want = oracle_pick(&candidates, dme.prevailing.get(g)).map(|e| e.index);
            let got = dme.select_for(g).map(|e| e.index);
            ensure!(
                got == want,
                "subgroup {g}: selector {got:?}, oracle {want:?}"
            );
            decisions += 1;
        }
    }
    Ok(format!("{decisions} selections over 1000 instances"))
}

fn end_to_end_determinism() -> Check {
    let path = fixtures().join("scenarios/bias_b.json");
    let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    let spec: ScenarioSpec = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    ensure!(
        spec.n_participants == 27 && spec.p_a == 0.3,
        "scenario fixture changed"
    );
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut bytes = Vec::new();
    let mut first = Vec::new();
    let mut slowest = Duration::ZERO;
    for run in 0..2 {
        let start = Instant::now();
        let log = run_scenario(&spec).map_err(|e| e.to_string())?;
        slowest = slowest.max(start.elapsed());
        let out = dir.path().join(format!("run{run}.jsonl"));
        logfile::write_log(&out, &log).map_err(|e| e.to_string())?;
        bytes.push(std::fs::read(&out).map_err(|e| e.to_string())?);
        if run == 0 {
            first = log;
        }
    }
    ensure!(bytes[0] == bytes[1], "exported logs differ");
    let forecasts: Vec<_> = first
        .iter()
        .filter_map(|r| match &r.event {
            Event::RoundFinalized { forecast, .. } => Some(forecast),
            _ => None,
        })
        .collect();
    ensure!(forecasts.len() == 4, "{} rounds finalized", forecasts.len());
    for f in &forecasts {
        ensure!(
            f.pick == Pick::B && f.wcf > 0.08,
            "{}: {:?} wcf {}",
            f.question_id,
            f.pick,
            f.wcf
        );
    }
    ensure!(slowest < Duration::from_secs(10), "a run took {slowest:?}");
    let wcfs: Vec<String> = forecasts.iter().map(|f| format!("{:+.3}", f.wcf)).collect();
    Ok(format!(
        "wcf {}; slowest run {:.2} s",
        wcfs.join(" "),
        slowest.as_secs_f64()
    ))
}

fn replay_file(path: &Path) -> Result<(), String> {
    let log = logfile::read_log(path).map_err(|e| e.to_string())?;
    let name = path.display();
    let engine = replay(&log).map_err(|e| format!("{name}: {e}"))?;
    let proj = LogProjection::from_log(&log);
    ensure!(
        proj.rounds.len() == engine.outcomes().len(),
        "{name}: {} logged rounds, {} replayed",
        proj.rounds.len(),
        engine.outcomes().len()
    );
    for o in engine.outcomes() {
        let r = &proj.rounds[&o.round];
        ensure!(
            r.forecast.as_ref() == Some(&o.forecast),
            "{name}: round {} forecast",
            o.round
        );
        ensure!(
            r.matching.ledger == o.matching.ledger,
            "{name}: round {} ledger",
            o.round
        );
    }
    Ok(())
}

fn log_replay() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for name in ["bias_b.json", "persuadable.json"] {
        let text = std::fs::read_to_string(fixtures().join("scenarios").join(name))
            .map_err(|e| e.to_string())?;
        let spec: ScenarioSpec = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        let out = dir.path().join(name.replace(".json", ".jsonl"));
        let log = run_scenario(&spec).map_err(|e| e.to_string())?;
        logfile::write_log(&out, &log).map_err(|e| e.to_string())?;
        files.push(out);
    }
    for seed in 0..10 {
        let spec = random_scenario(1_000 + seed, &mut rng);
        let out = dir.path().join(format!("random-{seed}.jsonl"));
        let log = run_scenario(&spec).map_err(|e| e.to_string())?;
        logfile::write_log(&out, &log).map_err(|e| e.to_string())?;
        files.push(out);
    }
    for (path, _) in logfile::read_dir(&fixtures().join("table")).map_err(|e| e.to_string())? {
        files.push(path);
    }
    for f in &files {
        replay_file(f)?;
    }
    Ok(format!("{} logs", files.len()))
}

fn main() -> ExitCode {
    let checks: [Criterion; 9] = [
        ("pick record report", pick_record_report),
        ("conversation rate cohorts", rate_cohort_report),
        ("profit identity", profit_identity),
        ("exact binomial tail", exact_binomial),
        ("weighted mean properties", weighted_mean_properties),
        ("insight novelty and mixing", novelty_and_mixing),
        ("challenge selector oracle", selector_oracle),
        ("end-to-end determinism", end_to_end_determinism),
        ("log replay", log_replay),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in checks {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let ms = start.elapsed().as_millis();
        match result {
            Ok(detail) => println!("PASS {name} ({detail}; {ms} ms)"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("{} passed, {failed} failed", checks.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
