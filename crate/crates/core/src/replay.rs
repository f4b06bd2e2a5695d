//! Rebuilding session state from a log.
//!
//! Two routes: [`replay`] re-executes the logged inputs against a fresh
//! engine, answering analyzer calls from the logged assessments, and checks
//! that the regenerated log matches. [`LogProjection`] folds the derived
//! events directly without running the engine.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::analyzer::{AnalyzerError, AssessedStance, DialogAnalyzer, Insight};
use crate::domain::{Author, ChatMessage, ForecastQuestion, ParticipantId, SubgroupId, Thinktank};
use crate::forecast::CollectiveForecast;
use crate::matching::MatchingEngine;
use crate::sentiment::SentimentSeries;
use crate::session::{Event, EventRecord, SessionEngine, SessionError};

#[derive(Debug, Clone, Default)]
struct Recorded {
    stance: Option<AssessedStance>,
    insights: Vec<Insight>,
}

/// Analyzer that answers with what a log says the original analyzer said.
///
/// Answers are keyed by the subgroup, seq and timestamp of the chat line
/// that triggered them, since seqs restart every round. Calls with no
/// recorded stance fail, which the engine treats as "no new assessment".
#[derive(Debug, Clone, Default)]
pub struct ReplayAnalyzer {
    recorded: BTreeMap<(SubgroupId, u64, u64), Recorded>,
}

impl ReplayAnalyzer {
    pub fn from_log(log: &[EventRecord]) -> Self {
        let mut recorded: BTreeMap<(SubgroupId, u64, u64), Recorded> = BTreeMap::new();
        let mut current: Option<(SubgroupId, u64, u64)> = None;
        for rec in log {
            match &rec.event {
                Event::Chat { message, .. } => {
                    let key = (message.subgroup_id.clone(), message.seq, message.timestamp);
                    recorded.entry(key.clone()).or_default();
                    current = Some(key);
                }
                Event::StanceAssessed { stance, .. } => {
                    if let Some(key) = &current {
                        recorded.entry(key.clone()).or_default().stance = Some(stance.clone());
                    }
                }
                Event::InsightRegistered { insight, .. } => {
                    if let Some(key) = &current {
                        recorded
                            .entry(key.clone())
                            .or_default()
                            .insights
                            .push(insight.clone());
                    }
                }
                _ => current = None,
            }
        }
        ReplayAnalyzer { recorded }
    }

    fn key_of(window: &[ChatMessage]) -> Option<(SubgroupId, u64, u64)> {
        window
            .iter()
            .max_by_key(|m| m.seq)
            .map(|m| (m.subgroup_id.clone(), m.seq, m.timestamp))
    }
}

impl DialogAnalyzer for ReplayAnalyzer {
    fn assess(
        &mut self,
        _participant: &ParticipantId,
        window: &[ChatMessage],
        _question: &ForecastQuestion,
    ) -> Result<AssessedStance, AnalyzerError> {
        Self::key_of(window)
            .and_then(|k| self.recorded.get(&k))
            .and_then(|r| r.stance.clone())
            .ok_or_else(|| AnalyzerError::BackendUnavailable(String::from("not in log")))
    }

    fn extract_insights(
        &mut self,
        _subgroup: &SubgroupId,
        window: &[ChatMessage],
        _question: &ForecastQuestion,
    ) -> Result<Vec<Insight>, AnalyzerError> {
        Ok(Self::key_of(window)
            .and_then(|k| self.recorded.get(&k))
            .map(|r| r.insights.clone())
            .unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReplayError {
    #[error("log is empty or does not start with session_created")]
    MissingHeader,
    #[error("record {seq} was rejected on replay: {error}")]
    Rejected { seq: u64, error: SessionError },
    #[error("replayed log diverges at record {seq}")]
    Divergence { seq: u64 },
    #[error("replayed log has {replayed} records, original has {original}")]
    LengthMismatch { original: usize, replayed: usize },
}

/// Re-execute the inputs of `log` with `analyzer` and return the engine.
pub fn replay_with(
    log: &[EventRecord],
    analyzer: &mut dyn DialogAnalyzer,
) -> Result<SessionEngine, ReplayError> {
    let (first, rest) = log.split_first().ok_or(ReplayError::MissingHeader)?;
    let Event::SessionCreated { session_id, config } = &first.event else {
        return Err(ReplayError::MissingHeader);
    };
    let rejected = |seq| move |error| ReplayError::Rejected { seq, error };
    let (mut engine, _) = SessionEngine::create(session_id.clone(), config.clone(), first.time_ms)
        .map_err(rejected(first.seq))?;
    for rec in rest {
        let t = rec.time_ms;
        match &rec.event {
            Event::ParticipantJoined {
                participant_id,
                display_name,
            } => {
                engine
                    .join(participant_id.clone(), display_name.clone(), t)
                    .map_err(rejected(rec.seq))?;
            }
            Event::RoundStarted {
                round, question, ..
            } => {
                if engine.config().questions.get(*round) != Some(question) {
                    engine
                        .add_question(question.clone())
                        .map_err(rejected(rec.seq))?;
                }
                engine.start_round(*round, t).map_err(rejected(rec.seq))?;
            }
            Event::Chat { message, .. } => {
                if let Author::Participant(p) = &message.author {
                    engine
                        .ingest_chat(p, &message.text, t, analyzer)
                        .map_err(rejected(rec.seq))?;
                }
            }
            Event::SessionEnded { .. } => {
                engine.end_session(t).map_err(rejected(rec.seq))?;
            }
            _ => {}
        }
    }
    if let Some(last) = log.last() {
        engine.advance_to(last.time_ms);
    }
    Ok(engine)
}

/// Replay against the log's own analyzer answers and require an identical
/// regenerated log.
pub fn replay(log: &[EventRecord]) -> Result<SessionEngine, ReplayError> {
    let mut analyzer = ReplayAnalyzer::from_log(log);
    let engine = replay_with(log, &mut analyzer)?;
    let regenerated = engine.log();
    if let Some((a, _)) = log.iter().zip(regenerated).find(|(a, b)| a != b) {
        return Err(ReplayError::Divergence { seq: a.seq });
    }
    if regenerated.len() != log.len() {
        return Err(ReplayError::LengthMismatch {
            original: log.len(),
            replayed: regenerated.len(),
        });
    }
    Ok(engine)
}

/// Per-round state recovered by folding log records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProjectedRound {
    pub question: Option<ForecastQuestion>,
    pub matching: MatchingEngine,
    pub series: SentimentSeries,
    pub forecast: Option<CollectiveForecast>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LogProjection {
    pub session_id: String,
    pub participants: Vec<ParticipantId>,
    pub thinktanks: Vec<Thinktank>,
    pub rounds: BTreeMap<usize, ProjectedRound>,
    pub ended: bool,
}

impl LogProjection {
    pub fn from_log(log: &[EventRecord]) -> Self {
        let mut p = LogProjection::default();
        for rec in log {
            p.apply(rec);
        }
        p
    }

    pub fn apply(&mut self, rec: &EventRecord) {
        match &rec.event {
            Event::SessionCreated { session_id, .. } => self.session_id = session_id.clone(),
            Event::ParticipantJoined { participant_id, .. } => {
                self.participants.push(participant_id.clone())
            }
            Event::PartitionAssigned { thinktanks, .. } => self.thinktanks = thinktanks.clone(),
            Event::RoundStarted {
                round, question, ..
            } => {
                self.rounds.insert(
                    *round,
                    ProjectedRound {
                        question: Some(question.clone()),
                        ..ProjectedRound::default()
                    },
                );
            }
            Event::InsightRegistered { round, insight, .. } => {
                self.round(*round).matching.register_insight(insight);
            }
            Event::InsightRouted {
                round,
                subgroup,
                canonical_key,
                ..
            } => {
                self.round(*round)
                    .matching
                    .record_share(subgroup, *canonical_key);
            }
            Event::Snapshot {
                round,
                elapsed_ms,
                weighted_mean,
                ..
            } => {
                self.round(*round).series.push(*elapsed_ms, *weighted_mean);
            }
            Event::RoundFinalized { round, forecast } => {
                self.round(*round).forecast = Some(forecast.clone());
            }
            Event::SessionEnded { .. } => self.ended = true,
            Event::Chat { .. } | Event::AgentMessage { .. } | Event::StanceAssessed { .. } => {}
        }
    }

    fn round(&mut self, index: usize) -> &mut ProjectedRound {
        self.rounds.entry(index).or_default()
    }

    pub fn forecasts(&self) -> Vec<&CollectiveForecast> {
        self.rounds
            .values()
            .filter_map(|r| r.forecast.as_ref())
            .collect()
    }
}
