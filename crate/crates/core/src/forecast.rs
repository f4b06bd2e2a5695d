//! Reducing the final population profile to a pick or a toss-up.

use serde::{Deserialize, Serialize};

use crate::analyzer::{SupportError, SupportVector};
use crate::domain::{QuestionId, RiskPoints, ScaleMapping, Side};

/// Half-width of the closed toss-up band around zero.
pub const TOSSUP_BAND: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pick {
    A,
    B,
    #[serde(rename = "none")]
    None,
}

impl Pick {
    pub fn side(self) -> Option<Side> {
        match self {
            Pick::A => Some(Side::A),
            Pick::B => Some(Side::B),
            Pick::None => None,
        }
    }
}

impl From<Side> for Pick {
    fn from(s: Side) -> Self {
        match s {
            Side::A => Pick::A,
            Side::B => Pick::B,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectiveForecast {
    pub question_id: QuestionId,
    pub wcf: f64,
    pub pick: Pick,
    pub risk_points: Option<RiskPoints>,
    pub is_tossup: bool,
    pub final_profile: SupportVector,
}

/// Classify a profile under the default scale mapping.
pub fn finalize(
    final_profile: [f64; 4],
    question_id: QuestionId,
) -> Result<CollectiveForecast, SupportError> {
    finalize_with(final_profile, question_id, ScaleMapping::default())
}

/// `|wcf| <= 0.08` is a toss-up; otherwise the sign picks the side, and the
/// risk level is the picked side's better-supported option (ties go to 10).
pub fn finalize_with(
    final_profile: [f64; 4],
    question_id: QuestionId,
    mapping: ScaleMapping,
) -> Result<CollectiveForecast, SupportError> {
    let profile = SupportVector::new(final_profile)?;
    let wcf = profile.weighted_mean();
    let side = if wcf < -TOSSUP_BAND {
        Some(Side::A)
    } else if wcf > TOSSUP_BAND {
        Some(Side::B)
    } else {
        None
    };
    let risk_points = side.map(|s| {
        let twenty = profile.get(mapping.index_of(s, RiskPoints::Twenty));
        let ten = profile.get(mapping.index_of(s, RiskPoints::Ten));
        if twenty > ten {
            RiskPoints::Twenty
        } else {
            RiskPoints::Ten
        }
    });
    Ok(CollectiveForecast {
        question_id,
        wcf,
        pick: side.map_or(Pick::None, Pick::from),
        risk_points,
        is_tossup: side.is_none(),
        final_profile: profile,
    })
}
