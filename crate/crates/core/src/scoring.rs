//! Scoring collective picks against game outcomes, split by conversation rate.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::domain::{Author, ForecastQuestion, QuestionId, RiskPoints, Side};
use crate::forecast::Pick;
use crate::session::{Event, EventRecord};
use crate::stats::{binomial_p, roi};

/// Default stake per pick used for profit figures.
pub const DEFAULT_STAKE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covering {
    A,
    B,
    Push,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameOutcome {
    pub question_id: QuestionId,
    pub covering: Covering,
    /// Overrides the favorite implied by the spread when present.
    pub favorite: Option<Side>,
}

/// One finalized round as recovered from a session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PickRecord {
    pub session_id: String,
    pub round: usize,
    pub question_id: QuestionId,
    pub pick: Pick,
    pub risk_points: Option<RiskPoints>,
    pub wcf: f64,
    /// Side favored by the posted spread.
    pub spread_favorite: Option<Side>,
    /// Participant chat characters per minute per participant.
    pub conversation_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPick {
    pub record: PickRecord,
    pub side: Side,
    pub won: bool,
    pub is_favorite_pick: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScoringError {
    #[error("no outcome for question {0}")]
    MissingOutcome(QuestionId),
}

/// Per-round pick records in log order. Rounds that never finalized are
/// skipped.
pub fn picks_from_log(session_id: &str, log: &[EventRecord]) -> Vec<PickRecord> {
    let mut joined = 0usize;
    let mut current: Option<(usize, ForecastQuestion, u64, usize, usize)> = None;
    let mut out = Vec::new();
    for rec in log {
        match &rec.event {
            Event::ParticipantJoined { .. } => joined += 1,
            Event::RoundStarted {
                round, question, ..
            } => {
                current = Some((*round, question.clone(), rec.time_ms, joined, 0));
            }
            Event::Chat { round, message } => {
                if let Some(cur) = current.as_mut() {
                    if cur.0 == *round && matches!(message.author, Author::Participant(_)) {
                        cur.4 += message.text.chars().count();
                    }
                }
            }
            Event::RoundFinalized { round, forecast } => {
                let Some((r, question, started, participants, chars)) = current.take() else {
                    continue;
                };
                if r != *round {
                    continue;
                }
                out.push(PickRecord {
                    session_id: String::from(session_id),
                    round: r,
                    question_id: forecast.question_id.clone(),
                    pick: forecast.pick,
                    risk_points: forecast.risk_points,
                    wcf: forecast.wcf,
                    spread_favorite: question.favorite(),
                    conversation_rate: conversation_rate(
                        chars,
                        rec.time_ms.saturating_sub(started),
                        participants,
                    ),
                });
            }
            _ => {}
        }
    }
    out
}

/// Characters per minute per participant; zero when undefined.
pub fn conversation_rate(chars: usize, duration_ms: u64, participants: usize) -> f64 {
    if duration_ms == 0 || participants == 0 {
        return 0.0;
    }
    let minutes = duration_ms as f64 / 60_000.0;
    chars as f64 / minutes / participants as f64
}

/// Score non-toss-up picks. Pushes are dropped; a pick without an outcome
/// is an error.
pub fn score_picks(
    records: &[PickRecord],
    outcomes: &BTreeMap<QuestionId, GameOutcome>,
) -> Result<Vec<ScoredPick>, ScoringError> {
    let mut scored = Vec::new();
    for record in records {
        let Some(side) = record.pick.side() else {
            continue;
        };
        let outcome = outcomes
            .get(&record.question_id)
            .ok_or_else(|| ScoringError::MissingOutcome(record.question_id.clone()))?;
        let won = match outcome.covering {
            Covering::Push => continue,
            Covering::A => side == Side::A,
            Covering::B => side == Side::B,
        };
        let favorite = outcome.favorite.or(record.spread_favorite);
        scored.push(ScoredPick {
            record: record.clone(),
            side,
            won,
            is_favorite_pick: favorite == Some(side),
        });
    }
    Ok(scored)
}

/// Nearest-rank quantile: the value at rank `ceil(q * n)` (at least 1).
pub fn nearest_rank(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = libm::ceil(q.clamp(0.0, 1.0) * sorted.len() as f64) as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub picks: u32,
    pub wins: u32,
    pub losses: u32,
    /// Percent correct.
    pub accuracy: f64,
    /// Return on investment, percent.
    pub roi: f64,
    pub profit: f64,
    /// One-sided exact binomial p-value against a fair coin.
    pub p_value: f64,
}

impl ReportRow {
    pub fn from_picks<'a>(
        label: &str,
        picks: impl IntoIterator<Item = &'a ScoredPick>,
        stake: f64,
    ) -> Self {
        let (mut wins, mut losses) = (0u32, 0u32);
        for p in picks {
            if p.won {
                wins += 1;
            } else {
                losses += 1;
            }
        }
        let n = wins + losses;
        let (profit, roi_pct) = match roi(wins, losses, stake) {
            Ok(r) => (r.profit, r.percent()),
            Err(_) => (0.0, 0.0),
        };
        ReportRow {
            label: String::from(label),
            picks: n,
            wins,
            losses,
            accuracy: if n == 0 {
                0.0
            } else {
                f64::from(wins) / f64::from(n) * 100.0
            },
            roi: roi_pct,
            profit,
            p_value: binomial_p(u64::from(n), u64::from(wins), 0.5),
        }
    }
}

/// The rate below which a pick falls in the lower cohort.
pub fn rate_cutoff(scored: &[ScoredPick], quantile: f64) -> Option<f64> {
    let rates: Vec<f64> = scored.iter().map(|p| p.record.conversation_rate).collect();
    nearest_rank(&rates, quantile)
}

/// All, favorite, underdog, and the two conversation-rate cohorts. The lower
/// cohort holds picks strictly below the nearest-rank cutoff.
pub fn cohort_report(scored: &[ScoredPick], quantile: f64, stake: f64) -> Vec<ReportRow> {
    let pct = libm::round(quantile * 100.0);
    let cutoff = rate_cutoff(scored, quantile);
    let lower = |p: &&ScoredPick| cutoff.is_some_and(|c| p.record.conversation_rate < c);
    alloc::vec![
        ReportRow::from_picks("All Picks", scored, stake),
        ReportRow::from_picks(
            "Favorite Picks",
            scored.iter().filter(|p| p.is_favorite_pick),
            stake
        ),
        ReportRow::from_picks(
            "Underdog Picks",
            scored.iter().filter(|p| !p.is_favorite_pick),
            stake
        ),
        ReportRow::from_picks(
            &alloc::format!("Lower {pct}%"),
            scored.iter().filter(lower),
            stake
        ),
        ReportRow::from_picks(
            &alloc::format!("Upper {}%", 100.0 - pct),
            scored.iter().filter(|p| !lower(p)),
            stake
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pick(q: &str, side: Pick, rate: f64) -> PickRecord {
        PickRecord {
            session_id: "s1".into(),
            round: 0,
            question_id: q.into(),
            pick: side,
            risk_points: None,
            wcf: 0.5,
            spread_favorite: Some(Side::A),
            conversation_rate: rate,
        }
    }

    fn outcome(q: &str, covering: Covering) -> (QuestionId, GameOutcome) {
        (
            q.into(),
            GameOutcome {
                question_id: q.into(),
                covering,
                favorite: None,
            },
        )
    }

    #[test]
    fn rate_formula() {
        assert_eq!(conversation_rate(1500, 300_000, 30), 10.0);
        assert_eq!(conversation_rate(10, 0, 3), 0.0);
        assert_eq!(conversation_rate(10, 60_000, 0), 0.0);
    }

    #[test]
    fn nearest_rank_values() {
        let v = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(nearest_rank(&v, 0.25), Some(2.0));
        assert_eq!(nearest_rank(&v, 0.0), Some(1.0));
        assert_eq!(nearest_rank(&v, 1.0), Some(5.0));
        assert_eq!(nearest_rank(&[], 0.5), None);
    }

    #[test]
    fn scoring_skips_tossups_and_pushes() {
        let records = [
            pick("q1", Pick::A, 1.0),
            pick("q2", Pick::None, 1.0),
            pick("q3", Pick::B, 1.0),
            pick("q4", Pick::B, 1.0),
        ];
        let outcomes: BTreeMap<_, _> = [
            outcome("q1", Covering::A),
            outcome("q3", Covering::Push),
            outcome("q4", Covering::A),
        ]
        .into_iter()
        .collect();
        let scored = score_picks(&records, &outcomes).unwrap();
        assert_eq!(scored.len(), 2);
        assert!(scored[0].won && scored[0].is_favorite_pick);
        assert!(!scored[1].won && !scored[1].is_favorite_pick);
    }

    #[test]
    fn missing_outcome_is_error() {
        let err = score_picks(&[pick("q9", Pick::A, 1.0)], &BTreeMap::new()).unwrap_err();
        assert_eq!(err, ScoringError::MissingOutcome("q9".into()));
    }

    #[test]
    fn outcome_favorite_overrides_spread() {
        let mut outcomes = BTreeMap::new();
        let (k, mut o) = outcome("q1", Covering::B);
        o.favorite = Some(Side::B);
        outcomes.insert(k, o);
        let scored = score_picks(&[pick("q1", Pick::B, 1.0)], &outcomes).unwrap();
        assert!(scored[0].is_favorite_pick);
    }

    #[test]
    fn equal_rates_leave_lower_cohort_empty() {
        let records: Vec<_> = (0..8)
            .map(|i| pick(&alloc::format!("q{i}"), Pick::A, 40.0))
            .collect();
        let outcomes = (0..8)
            .map(|i| outcome(&alloc::format!("q{i}"), Covering::A))
            .collect();
        let scored = score_picks(&records, &outcomes).unwrap();
        let rows = cohort_report(&scored, 0.25, DEFAULT_STAKE);
        assert_eq!(rows[3].label, "Lower 25%");
        assert_eq!(rows[3].picks, 0);
        assert_eq!(
            (rows[3].accuracy, rows[3].roi, rows[3].p_value),
            (0.0, 0.0, 1.0)
        );
        assert_eq!(rows[4].label, "Upper 75%");
        assert_eq!(rows[4].picks, 8);
    }
}
