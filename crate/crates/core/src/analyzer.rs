//! Turning participant dialog into stances, support vectors, and insights.
//!
//! The [`MockAnalyzer`] is deterministic. It reads an explicit marker grammar,
//! `[pick:A|B][conf:x] reason; other reason`, and falls back to a small
//! keyword heuristic ("<team> will cover", "<team> won't cover", ...) when no
//! marker is present. Other backends plug in through [`DialogAnalyzer`].

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::domain::{
    ChatMessage, ForecastQuestion, InsightId, ParticipantId, RiskPoints, ScaleMapping, Side,
    SubgroupId,
};

/// Messages per participant considered by one assessment.
pub const ASSESSMENT_WINDOW: usize = 10;
pub const DEFAULT_CONVICTION: f64 = 0.5;
pub const DEFAULT_SMOOTHING_ALPHA: f64 = 0.5;
/// Allowed deviation of a support vector's sum from 1.
pub const SUPPORT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stance {
    A,
    B,
    #[serde(rename = "neutral")]
    Neutral,
}

impl Stance {
    pub fn side(self) -> Option<Side> {
        match self {
            Stance::A => Some(Side::A),
            Stance::B => Some(Side::B),
            Stance::Neutral => None,
        }
    }
}

impl From<Side> for Stance {
    fn from(s: Side) -> Self {
        match s {
            Side::A => Stance::A,
            Side::B => Stance::B,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessedStance {
    pub participant_id: ParticipantId,
    pub side: Stance,
    /// In `[0, 1]`; ignored when `side` is neutral.
    pub conviction: f64,
    pub reasons: Vec<String>,
    /// Seq of the newest message the assessment reflects.
    pub as_of_seq: u64,
}

impl AssessedStance {
    pub fn neutral(participant_id: ParticipantId, as_of_seq: u64) -> Self {
        AssessedStance {
            participant_id,
            side: Stance::Neutral,
            conviction: 0.0,
            reasons: Vec::new(),
            as_of_seq,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum SupportError {
    #[error("support component {index} is negative or not finite ({value})")]
    Negative { index: usize, value: f64 },
    #[error("supports sum to {0}, expected 1")]
    NotNormalized(f64),
}

/// Distribution over the four options in scale order (`-2, -1, +1, +2`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct SupportVector([f64; 4]);

impl SupportVector {
    pub const UNIFORM: SupportVector = SupportVector([0.25; 4]);

    pub fn new(w: [f64; 4]) -> Result<Self, SupportError> {
        check_profile(&w)?;
        Ok(SupportVector(w))
    }

    /// Scale a nonnegative vector to unit sum; `None` if it has no mass.
    pub fn normalized(w: [f64; 4]) -> Option<Self> {
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return None;
        }
        let total: f64 = w.iter().sum();
        if total <= 0.0 {
            return None;
        }
        Some(SupportVector(w.map(|x| x / total)))
    }

    pub fn weights(&self) -> [f64; 4] {
        self.0
    }

    pub fn get(&self, index: usize) -> f64 {
        self.0[index]
    }

    /// Weighted collective forecast of this profile on the `-2..=+2` scale.
    pub fn weighted_mean(&self) -> f64 {
        crate::sentiment::scale_mean(&self.0)
    }

    /// Swap A-side and B-side supports.
    pub fn mirrored(&self) -> SupportVector {
        let [a, b, c, d] = self.0;
        SupportVector([d, c, b, a])
    }
}

impl<'de> Deserialize<'de> for SupportVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let w = <[f64; 4]>::deserialize(d)?;
        SupportVector::new(w).map_err(serde::de::Error::custom)
    }
}

pub(crate) fn check_profile(w: &[f64; 4]) -> Result<(), SupportError> {
    for (index, &value) in w.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(SupportError::Negative { index, value });
        }
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > SUPPORT_TOLERANCE {
        return Err(SupportError::NotNormalized(total));
    }
    Ok(())
}

/// Map a stance onto the four options under the default scale mapping.
///
/// With conviction `c`, the chosen side gets mass `M = 0.5 + 0.5c`, split
/// `M*c` on its 20-point option and `M*(1-c)` on its 10-point option; the
/// other side's options get `(1-M)/2` each. Neutral is uniform.
pub fn stance_to_support(stance: &AssessedStance) -> SupportVector {
    stance_to_support_with(stance, ScaleMapping::default())
}

pub fn stance_to_support_with(stance: &AssessedStance, mapping: ScaleMapping) -> SupportVector {
    let Some(side) = stance.side.side() else {
        return SupportVector::UNIFORM;
    };
    let c = stance.conviction.clamp(0.0, 1.0);
    let m = 0.5 + 0.5 * c;
    let mut w = [0.0; 4];
    w[mapping.index_of(side, RiskPoints::Twenty)] = m * c;
    w[mapping.index_of(side, RiskPoints::Ten)] = m * (1.0 - c);
    let rest = (1.0 - m) / 2.0;
    w[mapping.index_of(side.opposite(), RiskPoints::Twenty)] = rest;
    w[mapping.index_of(side.opposite(), RiskPoints::Ten)] = rest;
    SupportVector(w)
}

/// Exponential smoothing `(1 - alpha) * prev + alpha * next`, renormalized.
pub fn smooth_update(prev: &SupportVector, next: &SupportVector, alpha: f64) -> SupportVector {
    let alpha = if alpha > 0.0 && alpha <= 1.0 {
        alpha
    } else {
        1.0
    };
    let mut w = [0.0; 4];
    for (i, slot) in w.iter_mut().enumerate() {
        *slot = (1.0 - alpha) * prev.0[i] + alpha * next.0[i];
    }
    SupportVector::normalized(w).unwrap_or(*next)
}

/// Hash of a side plus normalized reason text, used to deduplicate insights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CanonicalKey(pub u64);

impl fmt::Display for CanonicalKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl Serialize for CanonicalKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CanonicalKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        u64::from_str_radix(&s, 16)
            .map(CanonicalKey)
            .map_err(serde::de::Error::custom)
    }
}

/// Lowercase, drop punctuation, collapse whitespace.
pub fn normalize_reason(text: &str) -> String {
    let mut cleaned = String::with_capacity(text.len());
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cleaned.extend(ch.to_lowercase());
        } else if ch.is_whitespace() {
            cleaned.push(' ');
        }
    }
    let mut out = String::with_capacity(cleaned.len());
    for word in cleaned.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

pub fn canonical_key<S: AsRef<str>>(side: Side, reasons: &[S]) -> CanonicalKey {
    let mut h = FnvHasher::default();
    h.write(match side {
        Side::A => b"A",
        Side::B => b"B",
    });
    for r in reasons {
        h.write_u8(0x1f);
        h.write(normalize_reason(r.as_ref()).as_bytes());
    }
    CanonicalKey(h.finish())
}

/// A forecasted side with its reasons, routed between subgroups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Insight {
    pub id: InsightId,
    pub side: Side,
    pub reasons: Vec<String>,
    pub conviction: f64,
    pub origin_subgroup: SubgroupId,
    pub canonical_key: CanonicalKey,
}

impl Insight {
    pub fn new(
        id: InsightId,
        side: Side,
        reasons: Vec<String>,
        conviction: f64,
        origin_subgroup: SubgroupId,
    ) -> Self {
        let canonical_key = canonical_key(side, &reasons);
        Insight {
            id,
            side,
            reasons,
            conviction,
            origin_subgroup,
            canonical_key,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnalyzerError {
    #[error("analyzer backend unavailable: {0}")]
    BackendUnavailable(String),
}

/// Pluggable dialog assessment.
///
/// `assess` receives the participant's most recent messages (oldest first);
/// `extract_insights` receives messages from a single subgroup.
pub trait DialogAnalyzer {
    fn assess(
        &mut self,
        participant: &ParticipantId,
        window: &[ChatMessage],
        question: &ForecastQuestion,
    ) -> Result<AssessedStance, AnalyzerError>;

    fn extract_insights(
        &mut self,
        subgroup: &SubgroupId,
        window: &[ChatMessage],
        question: &ForecastQuestion,
    ) -> Result<Vec<Insight>, AnalyzerError>;
}

/// A pick signal read out of one message.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub side: Side,
    pub conviction: f64,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct MockAnalyzer {
    pub default_conviction: f64,
}

impl Default for MockAnalyzer {
    fn default() -> Self {
        MockAnalyzer {
            default_conviction: DEFAULT_CONVICTION,
        }
    }
}

impl MockAnalyzer {
    pub fn signal(&self, text: &str, question: &ForecastQuestion) -> Option<Signal> {
        parse_markers(text, self.default_conviction)
            .or_else(|| keyword_signal(text, question, self.default_conviction))
    }

    pub fn assess_window(
        &self,
        participant: &ParticipantId,
        window: &[ChatMessage],
        question: &ForecastQuestion,
    ) -> AssessedStance {
        let as_of_seq = window.last().map_or(0, |m| m.seq);
        let signals: Vec<Signal> = window
            .iter()
            .filter(|m| m.author.participant() == Some(participant))
            .filter_map(|m| self.signal(&m.text, question))
            .collect();
        let Some(latest) = signals.last() else {
            return AssessedStance::neutral(participant.clone(), as_of_seq);
        };
        let side = latest.side;
        let mut reasons: Vec<String> = Vec::new();
        let mut seen: Vec<String> = Vec::new();
        for s in signals.iter().filter(|s| s.side == side) {
            for r in &s.reasons {
                let norm = normalize_reason(r);
                if !seen.contains(&norm) {
                    seen.push(norm);
                    reasons.push(r.clone());
                }
            }
        }
        AssessedStance {
            participant_id: participant.clone(),
            side: side.into(),
            conviction: latest.conviction,
            reasons,
            as_of_seq,
        }
    }

    /// One insight per distinct `(side, reason)` in the window, in message order.
    pub fn insights_in(
        &self,
        subgroup: &SubgroupId,
        window: &[ChatMessage],
        question: &ForecastQuestion,
    ) -> Vec<Insight> {
        let mut out: Vec<Insight> = Vec::new();
        for msg in window.iter().filter(|m| m.author.participant().is_some()) {
            let Some(signal) = self.signal(&msg.text, question) else {
                continue;
            };
            for (k, reason) in signal.reasons.iter().enumerate() {
                let id = InsightId(alloc::format!("{subgroup}-{}-{k}", msg.seq));
                let insight = Insight::new(
                    id,
                    signal.side,
                    alloc::vec![reason.clone()],
                    signal.conviction,
                    subgroup.clone(),
                );
                if !out.iter().any(|i| i.canonical_key == insight.canonical_key) {
                    out.push(insight);
                }
            }
        }
        out
    }
}

impl DialogAnalyzer for MockAnalyzer {
    fn assess(
        &mut self,
        participant: &ParticipantId,
        window: &[ChatMessage],
        question: &ForecastQuestion,
    ) -> Result<AssessedStance, AnalyzerError> {
        Ok(self.assess_window(participant, window, question))
    }

    fn extract_insights(
        &mut self,
        subgroup: &SubgroupId,
        window: &[ChatMessage],
        question: &ForecastQuestion,
    ) -> Result<Vec<Insight>, AnalyzerError> {
        Ok(self.insights_in(subgroup, window, question))
    }
}

fn split_reasons(text: &str) -> Vec<String> {
    text.split(';')
        .map(str::trim)
        .filter(|r| !r.is_empty())
        .map(String::from)
        .collect()
}

/// Parse `[pick:A|B]` with optional `[conf:x]`; everything outside the
/// brackets is reason text, `;`-separated.
pub fn parse_markers(text: &str, default_conviction: f64) -> Option<Signal> {
    let mut side = None;
    let mut conviction = None;
    let mut rest = String::new();
    let mut cursor = text;
    while let Some(open) = cursor.find('[') {
        let Some(close) = cursor[open..].find(']').map(|c| open + c) else {
            break;
        };
        let inner = cursor[open + 1..close].trim();
        let recognized = match inner.split_once(':') {
            Some((key, value)) if key.trim().eq_ignore_ascii_case("pick") => {
                match value.trim() {
                    v if v.eq_ignore_ascii_case("a") => side = Some(Side::A),
                    v if v.eq_ignore_ascii_case("b") => side = Some(Side::B),
                    _ => {}
                }
                true
            }
            Some((key, value)) if key.trim().eq_ignore_ascii_case("conf") => {
                conviction = value
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|c| c.is_finite())
                    .map(|c| c.clamp(0.0, 1.0));
                true
            }
            _ => false,
        };
        rest.push_str(&cursor[..open]);
        if !recognized {
            rest.push_str(&cursor[open..=close]);
        }
        cursor = &cursor[close + 1..];
    }
    rest.push_str(cursor);
    let side = side?;
    Some(Signal {
        side,
        conviction: conviction.unwrap_or(default_conviction),
        reasons: split_reasons(&rest),
    })
}

const NEGATIVE_CUES: &[&str] = &[
    "won't cover",
    "wont cover",
    "will not cover",
    "can't cover",
    "cant cover",
    "cannot cover",
    "not going to cover",
    "fail to cover",
    "won't beat the spread",
    "will not beat the spread",
];

const POSITIVE_CUES: &[&str] = &[
    "will cover",
    "going to cover",
    "to cover",
    "covers",
    "cover",
    "beat the spread",
    "beats the spread",
];

fn is_word_char(c: Option<char>) -> bool {
    c.is_some_and(|c| c.is_alphanumeric() || c == '\'')
}

/// Byte offsets of whole-word occurrences of `needle` in `haystack`.
fn word_matches(haystack: &str, needle: &str) -> Vec<usize> {
    let mut out = Vec::new();
    if needle.is_empty() {
        return out;
    }
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(needle) {
        let start = from + pos;
        let end = start + needle.len();
        let before = haystack[..start].chars().next_back();
        let after = haystack[end..].chars().next();
        if !is_word_char(before) && !is_word_char(after) {
            out.push(start);
        }
        from = start + needle.len().max(1);
    }
    out
}

fn team_aliases(name: &str) -> Vec<String> {
    let full = name.trim().to_lowercase();
    let mut aliases = alloc::vec![full.clone()];
    if let Some(last) = full.split_whitespace().last() {
        if last != full && last.chars().count() >= 3 {
            aliases.push(String::from(last));
        }
    }
    aliases
}

/// Heuristic for unmarked messages: a cover cue attributed to the nearest
/// team mention (preceding mentions win over following ones).
pub fn keyword_signal(
    text: &str,
    question: &ForecastQuestion,
    default_conviction: f64,
) -> Option<Signal> {
    let lower = text.to_lowercase();
    let (cue_pos, negated) = NEGATIVE_CUES
        .iter()
        .flat_map(|c| word_matches(&lower, c))
        .min()
        .map(|p| (p, true))
        .or_else(|| {
            POSITIVE_CUES
                .iter()
                .flat_map(|c| word_matches(&lower, c))
                .min()
                .map(|p| (p, false))
        })?;

    let mut best_before: Option<(usize, Side)> = None;
    let mut best_after: Option<(usize, Side)> = None;
    for side in [Side::A, Side::B] {
        for alias in team_aliases(question.team(side)) {
            for pos in word_matches(&lower, &alias) {
                if pos < cue_pos {
                    if best_before.is_none_or(|(p, _)| pos > p) {
                        best_before = Some((pos, side));
                    }
                } else if best_after.is_none_or(|(p, _)| pos < p) {
                    best_after = Some((pos, side));
                }
            }
        }
    }
    let (_, team) = best_before.or(best_after)?;
    let side = if negated { team.opposite() } else { team };
    let reason = text.trim();
    Some(Signal {
        side,
        conviction: default_conviction,
        reasons: if reason.is_empty() {
            Vec::new()
        } else {
            alloc::vec![String::from(reason)]
        },
    })
}
