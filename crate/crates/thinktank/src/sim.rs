//! Scripted participants driving a full session on a virtual clock.
//!
//! Each participant holds a side and conviction per round, drawn from the
//! scenario's bias and conviction range, and posts marker-grammar messages
//! on a jittered schedule. Everything derives from the scenario seed, so a
//! scenario always produces the same log.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thinktank_core::analyzer::MockAnalyzer;
use thinktank_core::domain::{ForecastQuestion, InsightId, ParticipantId, Side, SubgroupId};
use thinktank_core::session::{Event, EventRecord, SessionConfig};

use crate::clock::{Clock, VirtualClock};
use crate::host::{pseudonym, HostError, SessionHandle, SessionHost};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvictionRange {
    pub lo: f64,
    pub hi: f64,
}

/// Optional changes to the generated session config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfigOverrides {
    pub target_subgroup_size: Option<usize>,
    pub snapshot_interval_ms: Option<u64>,
    pub agent_min_gap_ms: Option<u64>,
    pub smoothing_alpha: Option<f64>,
    pub round_duration_s: Option<u32>,
}

fn default_rate() -> f64 {
    4.0
}
fn default_gap() -> u64 {
    30_000
}
fn default_reasons() -> Vec<String> {
    [
        "better rest coming in",
        "bench depth",
        "home crowd edge",
        "their defense has been elite",
        "injury on the wing",
        "pace favors them",
        "rebounding mismatch",
        "road fatigue on a back to back",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n_participants: usize,
    /// Probability that a participant backs side A in a round.
    pub p_a: f64,
    pub conviction: ConvictionRange,
    /// Messages per participant per minute.
    #[serde(default = "default_rate")]
    pub message_rate: f64,
    #[serde(default = "default_reasons")]
    pub reasons: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    /// Games to play; a built-in set of four when empty.
    #[serde(default)]
    pub questions: Vec<ForecastQuestion>,
    #[serde(default)]
    pub overrides: ConfigOverrides,
    /// Participants may switch sides after hearing opposing agent messages.
    #[serde(default)]
    pub persuadable: bool,
    #[serde(default = "default_gap")]
    pub round_gap_ms: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("session host is unreachable")]
    ServerUnreachable,
    #[error("command rejected: {0}")]
    Rejected(HostError),
}

impl From<HostError> for SimError {
    fn from(e: HostError) -> Self {
        match e {
            HostError::Unavailable => SimError::ServerUnreachable,
            other => SimError::Rejected(other),
        }
    }
}

/// Four sample games.
pub fn default_questions() -> Vec<ForecastQuestion> {
    vec![
        ForecastQuestion::new("g1", "Timberwolves", "Trail Blazers", -5.5),
        ForecastQuestion::new("g2", "Celtics", "Knicks", -3.5),
        ForecastQuestion::new("g3", "Nuggets", "Suns", 2.0),
        ForecastQuestion::new("g4", "Heat", "Bucks", 6.5),
    ]
}

impl ScenarioSpec {
    pub fn new(n_participants: usize, p_a: f64, lo: f64, hi: f64, seed: u64) -> Self {
        ScenarioSpec {
            n_participants,
            p_a,
            conviction: ConvictionRange { lo, hi },
            message_rate: default_rate(),
            reasons: default_reasons(),
            seed,
            questions: Vec::new(),
            overrides: ConfigOverrides::default(),
            persuadable: false,
            round_gap_ms: default_gap(),
        }
    }

    pub fn questions(&self) -> Vec<ForecastQuestion> {
        let mut qs = if self.questions.is_empty() {
            default_questions()
        } else {
            self.questions.clone()
        };
        if let Some(d) = self.overrides.round_duration_s {
            for q in &mut qs {
                q.round_duration = d;
            }
        }
        qs
    }

    pub fn session_config(&self) -> SessionConfig {
        let mut c = SessionConfig::new(self.questions());
        c.seed = self.seed;
        let o = &self.overrides;
        if let Some(v) = o.target_subgroup_size {
            c.target_subgroup_size = v;
        }
        if let Some(v) = o.snapshot_interval_ms {
            c.snapshot_interval_ms = v;
        }
        if let Some(v) = o.agent_min_gap_ms {
            c.agent_min_gap_ms = v;
        }
        if let Some(v) = o.smoothing_alpha {
            c.smoothing_alpha = v;
        }
        c
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidScenario(m.to_string()));
        if self.n_participants < 2 {
            return bad("need at least 2 participants");
        }
        if !(0.0..=1.0).contains(&self.p_a) {
            return bad("p_a must lie in [0, 1]");
        }
        let ConvictionRange { lo, hi } = self.conviction;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return bad("conviction range must satisfy 0 <= lo <= hi <= 1");
        }
        if !(self.message_rate > 0.0 && self.message_rate.is_finite()) {
            return bad("message rate must be positive");
        }
        if self.reasons.iter().all(|r| r.trim().is_empty()) {
            return bad("reason pool is empty");
        }
        self.session_config()
            .validate()
            .or_else(|e| bad(&e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScriptedMessage {
    /// Milliseconds after round start.
    pub offset_ms: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundScript {
    pub side: Side,
    pub conviction: f64,
    pub messages: Vec<ScriptedMessage>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticipantScript {
    pub id: ParticipantId,
    pub display_name: String,
    pub rounds: Vec<RoundScript>,
}

/// Message offsets for one round: slot `k` of width `60000 / rate` holds
/// one message at a uniformly jittered point inside it.
pub fn schedule(rate: f64, duration_ms: u64, rng: &mut impl Rng) -> Vec<u64> {
    let interval = 60_000.0 / rate;
    let count = (rate * duration_ms as f64 / 60_000.0).floor() as u64;
    (0..count)
        .map(|k| {
            let t = (k as f64 + rng.gen::<f64>()) * interval;
            (t as u64).min(duration_ms.saturating_sub(1))
        })
        .collect()
}

pub fn generate_population(spec: &ScenarioSpec) -> Vec<ParticipantScript> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pool: Vec<&String> = spec
        .reasons
        .iter()
        .filter(|r| !r.trim().is_empty())
        .collect();
    let questions = spec.questions();
    let width = spec.n_participants.to_string().len();
    (0..spec.n_participants)
        .map(|i| {
            let rounds = questions
                .iter()
                .map(|q| {
                    let side = if rng.gen_bool(spec.p_a) {
                        Side::A
                    } else {
                        Side::B
                    };
                    let ConvictionRange { lo, hi } = spec.conviction;
                    let conviction = lo + (hi - lo) * rng.gen::<f64>();
                    let messages = schedule(spec.message_rate, q.round_duration_ms(), &mut rng)
                        .into_iter()
                        .map(|offset_ms| ScriptedMessage {
                            offset_ms,
                            reason: pool[rng.gen_range(0..pool.len())].clone(),
                        })
                        .collect();
                    RoundScript {
                        side,
                        conviction,
                        messages,
                    }
                })
                .collect();
            ParticipantScript {
                id: ParticipantId(format!("p{:0width$}", i + 1)),
                display_name: pseudonym(i),
                rounds,
            }
        })
        .collect()
}

pub fn marker_text(side: Side, conviction: f64, reason: &str) -> String {
    let s = match side {
        Side::A => "A",
        Side::B => "B",
    };
    format!("[pick:{s}][conf:{conviction:.2}] {reason}")
}

/// Tracks what persuadable participants have heard.
#[derive(Default)]
struct Persuasion {
    seen: u64,
    members: BTreeMap<SubgroupId, Vec<usize>>,
    insights: BTreeMap<InsightId, (Side, f64)>,
}

impl Persuasion {
    fn absorb(
        &mut self,
        events: &[EventRecord],
        index_of: &BTreeMap<ParticipantId, usize>,
        sides: &mut [Side],
        rng: &mut ChaCha8Rng,
    ) {
        for rec in events {
            self.seen = rec.seq + 1;
            match &rec.event {
                Event::PartitionAssigned { thinktanks, .. } => {
                    for t in thinktanks {
                        let idx = t.member_ids.iter().filter_map(|m| index_of.get(m).copied());
                        self.members.insert(t.id.clone(), idx.collect());
                    }
                }
                Event::InsightRegistered { insight, .. } => {
                    self.insights
                        .insert(insight.id.clone(), (insight.side, insight.conviction));
                }
                Event::AgentMessage {
                    message,
                    insight_id,
                    ..
                } => {
                    let Some(&(side, conviction)) = self.insights.get(insight_id) else {
                        continue;
                    };
                    for &i in self.members.get(&message.subgroup_id).into_iter().flatten() {
                        if sides[i] != side && rng.gen_bool((0.5 * conviction).clamp(0.0, 1.0)) {
                            sides[i] = side;
                        }
                    }
                }
                _ => {}
            }
        }
    }
}

/// Run the scenario against an in-process session host and return its log.
pub fn run_scenario(spec: &ScenarioSpec) -> Result<Vec<EventRecord>, SimError> {
    spec.validate()?;
    let clock = VirtualClock::new(0);
    let host = SessionHost::spawn(
        &format!("sim-{}", spec.seed),
        spec.session_config(),
        Box::new(MockAnalyzer::default()),
        Arc::new(clock.clone()),
        None,
    )?;
    drive(spec, &host.handle(), &clock)?;
    Ok(host.handle().log().wait()?)
}

/// Play every round of `spec` through `handle`, moving `clock` as needed.
pub fn drive(
    spec: &ScenarioSpec,
    handle: &SessionHandle,
    clock: &VirtualClock,
) -> Result<(), SimError> {
    let population = generate_population(spec);
    let index_of: BTreeMap<ParticipantId, usize> = population
        .iter()
        .enumerate()
        .map(|(i, p)| (p.id.clone(), i))
        .collect();
    for p in &population {
        handle
            .join(Some(p.id.clone()), Some(p.display_name.clone()))
            .wait()?;
    }
    let mut persuasion = Persuasion::default();
    let mut persuade_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let questions = spec.questions();
    for (r, q) in questions.iter().enumerate() {
        let t0 = clock.now_ms();
        handle.start_round(r).wait()?;
        let mut sides: Vec<Side> = population.iter().map(|p| p.rounds[r].side).collect();
        let mut queue: Vec<(u64, usize, &ScriptedMessage)> = population
            .iter()
            .enumerate()
            .flat_map(|(i, p)| {
                p.rounds[r]
                    .messages
                    .iter()
                    .map(move |m| (t0 + m.offset_ms, i, m))
            })
            .collect();
        queue.sort_by_key(|&(t, i, _)| (t, i));
        for (t, i, m) in queue {
            clock.set(t);
            if spec.persuadable {
                handle.advance().wait()?;
                let fresh = handle.log_since(persuasion.seen).wait()?;
                persuasion.absorb(&fresh, &index_of, &mut sides, &mut persuade_rng);
            }
            let script = &population[i].rounds[r];
            let text = marker_text(sides[i], script.conviction, &m.reason);
            handle.chat(population[i].id.clone(), text).wait()?;
        }
        let end = t0 + q.round_duration_ms();
        clock.set(end);
        handle.advance().wait()?;
        clock.set(end + spec.round_gap_ms);
    }
    handle.end_session().wait()?;
    Ok(())
}
