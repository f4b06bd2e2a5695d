//! Questions, options, participants, subgroups, and partitioning.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(
    /// Opaque participant token.
    ParticipantId
);
string_id!(
    /// Thinktank (subgroup) identifier, `g1`, `g2`, ... in partition order.
    SubgroupId
);
string_id!(QuestionId);
string_id!(InsightId);

/// Which team a pick, stance, or insight favors against the spread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl Side {
    /// `-1` for team A, `+1` for team B, matching the sign of the option scale.
    pub fn sign(self) -> f64 {
        match self {
            Side::A => -1.0,
            Side::B => 1.0,
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::A => "A",
            Side::B => "B",
        })
    }
}

/// Points the group "collectively wagers" on a side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum RiskPoints {
    Ten,
    Twenty,
}

impl RiskPoints {
    pub fn points(self) -> u8 {
        match self {
            RiskPoints::Ten => 10,
            RiskPoints::Twenty => 20,
        }
    }
}

impl From<RiskPoints> for u8 {
    fn from(r: RiskPoints) -> u8 {
        r.points()
    }
}

impl TryFrom<u8> for RiskPoints {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            10 => Ok(RiskPoints::Ten),
            20 => Ok(RiskPoints::Twenty),
            other => Err(alloc::format!("risk points must be 10 or 20, got {other}")),
        }
    }
}

/// Placement of the two risk levels on the `-2, -1, +1, +2` scale.
///
/// `HighRiskExtreme` puts the 20-point options at `±2`; `LowRiskExtreme`
/// swaps the risk levels. Support vectors are always indexed by scale value,
/// so index 0 is whichever option maps to `-2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMapping {
    #[default]
    HighRiskExtreme,
    LowRiskExtreme,
}

/// Scale values in support-vector index order.
pub const SCALE_VALUES: [i8; 4] = [-2, -1, 1, 2];

impl ScaleMapping {
    pub fn scale_value(self, side: Side, risk: RiskPoints) -> i8 {
        let magnitude = match (self, risk) {
            (ScaleMapping::HighRiskExtreme, RiskPoints::Twenty)
            | (ScaleMapping::LowRiskExtreme, RiskPoints::Ten) => 2,
            _ => 1,
        };
        match side {
            Side::A => -magnitude,
            Side::B => magnitude,
        }
    }

    /// Support-vector slot of an option.
    pub fn index_of(self, side: Side, risk: RiskPoints) -> usize {
        match self.scale_value(side, risk) {
            -2 => 0,
            -1 => 1,
            1 => 2,
            _ => 3,
        }
    }

    pub fn option_at(self, index: usize) -> ForecastOption {
        let side = if index < 2 { Side::A } else { Side::B };
        let outer = index == 0 || index == 3;
        let risk = match (self, outer) {
            (ScaleMapping::HighRiskExtreme, true) | (ScaleMapping::LowRiskExtreme, false) => {
                RiskPoints::Twenty
            }
            _ => RiskPoints::Ten,
        };
        ForecastOption {
            side,
            risk_points: risk,
            scale_value: SCALE_VALUES[index],
        }
    }

    /// The four options in scale order.
    pub fn options(self) -> Vec<ForecastOption> {
        (0..4).map(|i| self.option_at(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForecastOption {
    pub side: Side,
    pub risk_points: RiskPoints,
    pub scale_value: i8,
}

pub const DEFAULT_ROUND_SECONDS: u32 = 300;

/// A matchup to forecast against the spread.
///
/// `spread > 0` means team A is favored by that many points. Options are
/// generated from a [`ScaleMapping`]; when deserializing, a missing `options`
/// field is filled canonically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "QuestionRepr")]
pub struct ForecastQuestion {
    pub id: QuestionId,
    pub team_a: String,
    pub team_b: String,
    pub spread: f64,
    pub options: Vec<ForecastOption>,
    /// Seconds.
    pub round_duration: u32,
}

#[derive(Deserialize)]
struct QuestionRepr {
    id: QuestionId,
    team_a: String,
    team_b: String,
    spread: f64,
    #[serde(default)]
    options: Vec<ForecastOption>,
    #[serde(default = "default_round_duration")]
    round_duration: u32,
}

fn default_round_duration() -> u32 {
    DEFAULT_ROUND_SECONDS
}

impl From<QuestionRepr> for ForecastQuestion {
    fn from(r: QuestionRepr) -> Self {
        let options = if r.options.is_empty() {
            ScaleMapping::default().options()
        } else {
            r.options
        };
        ForecastQuestion {
            id: r.id,
            team_a: r.team_a,
            team_b: r.team_b,
            spread: r.spread,
            options,
            round_duration: r.round_duration,
        }
    }
}

impl ForecastQuestion {
    pub fn new(
        id: impl Into<QuestionId>,
        team_a: impl Into<String>,
        team_b: impl Into<String>,
        spread: f64,
    ) -> Self {
        Self::with_mapping(id, team_a, team_b, spread, ScaleMapping::default())
    }

    pub fn with_mapping(
        id: impl Into<QuestionId>,
        team_a: impl Into<String>,
        team_b: impl Into<String>,
        spread: f64,
        mapping: ScaleMapping,
    ) -> Self {
        ForecastQuestion {
            id: id.into(),
            team_a: team_a.into(),
            team_b: team_b.into(),
            spread,
            options: mapping.options(),
            round_duration: DEFAULT_ROUND_SECONDS,
        }
    }

    pub fn team(&self, side: Side) -> &str {
        match side {
            Side::A => &self.team_a,
            Side::B => &self.team_b,
        }
    }

    /// Favored team according to the spread sign; `None` for a pick'em.
    pub fn favorite(&self) -> Option<Side> {
        if self.spread > 0.0 {
            Some(Side::A)
        } else if self.spread < 0.0 {
            Some(Side::B)
        } else {
            None
        }
    }

    /// Mapping the options follow, if they are consistent with one.
    pub fn mapping(&self) -> Option<ScaleMapping> {
        [ScaleMapping::HighRiskExtreme, ScaleMapping::LowRiskExtreme]
            .into_iter()
            .find(|m| {
                self.options.len() == 4
                    && self
                        .options
                        .iter()
                        .all(|o| m.scale_value(o.side, o.risk_points) == o.scale_value)
            })
    }

    pub fn round_duration_ms(&self) -> u64 {
        u64::from(self.round_duration) * 1000
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QuestionViolation {
    #[error("exactly four options required (found {0})")]
    OptionCount(usize),
    #[error("duplicate scale value {0}")]
    DuplicateScaleValue(i8),
    #[error("scale value {0} outside {{-2, -1, +1, +2}}")]
    ScaleValueOutOfRange(i8),
    #[error("scale value {scale_value} has the wrong sign for side {side}")]
    SideSignMismatch { side: Side, scale_value: i8 },
    #[error("duplicate option for side {side} at {points} points")]
    DuplicateOption { side: Side, points: u8 },
    #[error("options do not follow a consistent risk-to-scale mapping")]
    InconsistentMapping,
    #[error("spread must be finite")]
    NonFiniteSpread,
    #[error("round duration must be positive")]
    ZeroRoundDuration,
    #[error("team names must be non-empty")]
    EmptyTeamName,
}

/// Every invariant violation of `q`; an empty list means the question is valid.
pub fn validate_question(q: &ForecastQuestion) -> Vec<QuestionViolation> {
    let mut out = Vec::new();
    if q.options.len() != 4 {
        out.push(QuestionViolation::OptionCount(q.options.len()));
    }
    let mut seen_values: Vec<i8> = Vec::new();
    let mut seen_pairs: Vec<(Side, RiskPoints)> = Vec::new();
    for o in &q.options {
        if !SCALE_VALUES.contains(&o.scale_value) {
            out.push(QuestionViolation::ScaleValueOutOfRange(o.scale_value));
        } else if seen_values.contains(&o.scale_value) {
            out.push(QuestionViolation::DuplicateScaleValue(o.scale_value));
        } else {
            seen_values.push(o.scale_value);
        }
        let sign_ok = match o.side {
            Side::A => o.scale_value < 0,
            Side::B => o.scale_value > 0,
        };
        if !sign_ok {
            out.push(QuestionViolation::SideSignMismatch {
                side: o.side,
                scale_value: o.scale_value,
            });
        }
        if seen_pairs.contains(&(o.side, o.risk_points)) {
            out.push(QuestionViolation::DuplicateOption {
                side: o.side,
                points: o.risk_points.points(),
            });
        } else {
            seen_pairs.push((o.side, o.risk_points));
        }
    }
    if out.is_empty() && q.mapping().is_none() {
        out.push(QuestionViolation::InconsistentMapping);
    }
    if !q.spread.is_finite() {
        out.push(QuestionViolation::NonFiniteSpread);
    }
    if q.round_duration == 0 {
        out.push(QuestionViolation::ZeroRoundDuration);
    }
    if q.team_a.trim().is_empty() || q.team_b.trim().is_empty() {
        out.push(QuestionViolation::EmptyTeamName);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub id: ParticipantId,
    pub display_name: String,
    pub subgroup_id: Option<SubgroupId>,
}

/// A deliberation subgroup and the surrogate agent embedded in it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thinktank {
    pub id: SubgroupId,
    pub member_ids: Vec<ParticipantId>,
    pub surrogate_id: String,
}

/// Who wrote a chat line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Author {
    Participant(ParticipantId),
    Surrogate(SubgroupId),
}

impl Author {
    pub fn participant(&self) -> Option<&ParticipantId> {
        match self {
            Author::Participant(p) => Some(p),
            Author::Surrogate(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    /// Per-subgroup sequence number, strictly increasing.
    pub seq: u64,
    /// Milliseconds since session start.
    pub timestamp: u64,
    pub author: Author,
    pub subgroup_id: SubgroupId,
    pub text: String,
    /// Insight carried by a surrogate message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<InsightId>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PartitionError {
    #[error("at least two participants are required (got {0})")]
    TooFewParticipants(usize),
    #[error("target subgroup size must be at least 2 (got {0})")]
    TargetTooSmall(usize),
    #[error("participant {0} listed more than once")]
    DuplicateParticipant(ParticipantId),
}

pub fn surrogate_id(subgroup: &SubgroupId) -> String {
    alloc::format!("surrogate-{subgroup}")
}

/// Shuffle `ids` with a seeded RNG and deal them into `ceil(n / target_size)`
/// subgroups whose sizes differ by at most one (larger groups first).
pub fn partition_participants(
    ids: &[ParticipantId],
    target_size: usize,
    seed: u64,
) -> Result<Vec<Thinktank>, PartitionError> {
    if ids.len() < 2 {
        return Err(PartitionError::TooFewParticipants(ids.len()));
    }
    if target_size < 2 {
        return Err(PartitionError::TargetTooSmall(target_size));
    }
    let mut sorted: Vec<&ParticipantId> = ids.iter().collect();
    sorted.sort();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(PartitionError::DuplicateParticipant(w[0].clone()));
    }

    let mut shuffled: Vec<ParticipantId> = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);

    let groups = ids.len().div_ceil(target_size);
    let base = ids.len() / groups;
    let extra = ids.len() % groups;
    let mut members = shuffled.into_iter();
    Ok((0..groups)
        .map(|g| {
            let size = base + usize::from(g < extra);
            let id = SubgroupId(alloc::format!("g{}", g + 1));
            Thinktank {
                surrogate_id: surrogate_id(&id),
                member_ids: members.by_ref().take(size).collect(),
                id,
            }
        })
        .collect())
}
