//! Regenerates `tests/fixtures/table/`: 14 four-game sessions of 30
//! participants (56 rounds, 6 toss-ups, 50 scored picks) plus outcomes.
//!
//! cargo run -p thinktank --example table_fixture -- crates/thinktank/tests/fixtures/table

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thinktank::logfile;
use thinktank_core::analyzer::MockAnalyzer;
use thinktank_core::domain::{ForecastQuestion, ParticipantId, Side};
use thinktank_core::session::{SessionConfig, SessionEngine};

const SESSIONS: usize = 14;
const GAMES: usize = 4;
const PARTICIPANTS: usize = 30;
const MESSAGES_EACH: usize = 1;

#[derive(Clone, Copy)]
struct Plan {
    rate: f64,
    /// `None` for a toss-up.
    outcome: Option<(bool, bool)>,
}

fn plans() -> Vec<Plan> {
    let lower = [
        37.9, 38.4, 38.8, 39.3, 39.7, 40.2, 40.6, 41.1, 41.5, 42.0, 42.4, 42.8,
    ];
    // (won, favorite) per pick: 3-6 and 2-1 below the cutoff, 20-10 and 6-2 above.
    let mut lower_results = Vec::new();
    lower_results.extend([(true, true); 3]);
    lower_results.extend([(false, true); 6]);
    lower_results.extend([(true, false); 2]);
    lower_results.push((false, false));
    let mut upper_results = Vec::new();
    upper_results.extend([(true, true); 20]);
    upper_results.extend([(false, true); 10]);
    upper_results.extend([(true, false); 6]);
    upper_results.extend([(false, false); 2]);

    let mut rng = ChaCha8Rng::seed_from_u64(2019);
    lower_results.shuffle(&mut rng);
    upper_results.shuffle(&mut rng);

    let mut out: Vec<Plan> = lower
        .iter()
        .zip(lower_results)
        .map(|(&rate, r)| Plan {
            rate,
            outcome: Some(r),
        })
        .collect();
    for (k, r) in upper_results.into_iter().enumerate() {
        let rate = ((43.0 + k as f64 * 12.6 / 37.0) * 10.0).round() / 10.0;
        out.push(Plan {
            rate,
            outcome: Some(r),
        });
    }
    for rate in [39.0, 41.7, 44.4, 47.2, 50.5, 53.3] {
        out.push(Plan {
            rate,
            outcome: None,
        });
    }
    out.shuffle(&mut rng);
    out
}

const TEAMS: [&str; 16] = [
    "Timberwolves",
    "Trail Blazers",
    "Celtics",
    "Knicks",
    "Nuggets",
    "Suns",
    "Heat",
    "Bucks",
    "Lakers",
    "Clippers",
    "Warriors",
    "Kings",
    "Hawks",
    "Hornets",
    "Pistons",
    "Pacers",
];

const FILLER: &str = "their guards have been sharp lately and the matchup inside looks lopsided \
    so I keep coming back to the same read on this game and the line feels off by a couple of \
    points given how both teams have played over the last two weeks at home and on the road";

const REASONS: [&str; 6] = [
    "rest edge",
    "bench depth",
    "defense travels",
    "rebounding mismatch",
    "injury on the wing",
    "pace favors them",
];

fn letter(side: Side) -> &'static str {
    if side == Side::A {
        "A"
    } else {
        "B"
    }
}

fn message(side: Side, reason: &str, len: usize) -> String {
    let mut text = format!("[pick:{}][conf:0.80] {reason} ", letter(side));
    text.extend(
        FILLER
            .chars()
            .cycle()
            .take(len.saturating_sub(text.chars().count())),
    );
    assert_eq!(
        text.chars().count(),
        len,
        "message too short for its marker"
    );
    text
}

fn main() {
    let dir: PathBuf = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "crates/thinktank/tests/fixtures/table".into())
        .into();
    std::fs::create_dir_all(&dir).expect("create fixture dir");
    let plans = plans();
    let mut outcomes = String::from("question_id,covering_side,favorite_side\n");

    for s in 0..SESSIONS {
        let session_plans = &plans[s * GAMES..(s + 1) * GAMES];
        let mut questions = Vec::new();
        for (g, plan) in session_plans.iter().enumerate() {
            let n = s * GAMES + g;
            // Alternate which side the group backs; the spread makes the
            // backed side the favorite or the underdog as planned.
            let pick = if n.is_multiple_of(2) {
                Side::A
            } else {
                Side::B
            };
            let favorite = match plan.outcome {
                Some((_, true)) => pick,
                Some((_, false)) => pick.opposite(),
                None => Side::A,
            };
            let spread = (3.5 + (n % 5) as f64) * if favorite == Side::A { 1.0 } else { -1.0 };
            let id = format!("game-{:02}", n + 1);
            let (a, b) = (TEAMS[(2 * n) % 16], TEAMS[(2 * n + 1) % 16]);
            questions.push((
                ForecastQuestion::new(id.as_str(), a, b, spread),
                pick,
                favorite,
            ));
            let covering = match plan.outcome {
                Some((won, _)) => letter(if won { pick } else { pick.opposite() }),
                None => "A",
            };
            let fav = letter(favorite);
            let _ = writeln!(outcomes, "{id},{covering},{fav}");
        }

        let mut config = SessionConfig::new(questions.iter().map(|(q, _, _)| q.clone()).collect());
        config.snapshot_interval_ms = 30_000;
        config.seed = s as u64;
        let session_id = format!("table-{:02}", s + 1);
        let (mut engine, _) = SessionEngine::create(session_id.as_str(), config, 0).unwrap();
        let ids: Vec<ParticipantId> = (1..=PARTICIPANTS)
            .map(|i| ParticipantId(format!("p{i:02}")))
            .collect();
        for (i, id) in ids.iter().enumerate() {
            engine
                .join(id.clone(), format!("Panelist {}", i + 1), 1_000)
                .unwrap();
        }

        let mut mock = MockAnalyzer::default();
        let mut t0 = 60_000;
        for (g, plan) in session_plans.iter().enumerate() {
            let (_, pick, _) = questions[g];
            engine.start_round(g, t0).unwrap();
            let total = (plan.rate * 150.0).round() as usize;
            let count = PARTICIPANTS * MESSAGES_EACH;
            for k in 0..count {
                let who = k % PARTICIPANTS;
                let side = match plan.outcome {
                    // Even split for toss-ups.
                    None if who.is_multiple_of(2) => Side::A,
                    None => Side::B,
                    Some(_) if who < 22 => pick,
                    Some(_) => pick.opposite(),
                };
                let len = total / count + usize::from(k < total % count);
                let text = message(side, REASONS[(who + g) % REASONS.len()], len);
                let t = t0 + 2_000 + k as u64 * 9_000;
                engine.ingest_chat(&ids[who], &text, t, &mut mock).unwrap();
            }
            let end = t0 + 300_000;
            engine.advance_to(end);
            t0 = end + 60_000;
        }
        engine.end_session(t0).unwrap();
        logfile::write_log(&dir.join(format!("{session_id}.jsonl")), engine.log()).unwrap();
    }
    std::fs::write(dir.join("outcomes.csv"), outcomes).unwrap();
    println!("wrote {} sessions to {}", SESSIONS, dir.display());
}
