//! Support aggregation, the weighted collective forecast, and display scope.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::analyzer::{check_profile, SupportError, SupportVector};
use crate::domain::SubgroupId;

/// `w1*(-2) + w2*(-1) + w3*(+1) + w4*(+2)`.
pub(crate) fn scale_mean(w: &[f64; 4]) -> f64 {
    -2.0 * w[0] - w[1] + w[2] + 2.0 * w[3]
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum SentimentError {
    #[error("malformed profile: {0}")]
    MalformedProfile(#[from] SupportError),
    #[error("cannot aggregate an empty population")]
    EmptyPopulation,
    #[error("aggregation weights must be nonnegative, finite, not all zero, one per vector")]
    InvalidWeights,
}

/// Weighted mean of a raw four-option profile on the `-2..=+2` scale.
pub fn weighted_mean(profile: [f64; 4]) -> Result<f64, SentimentError> {
    check_profile(&profile)?;
    Ok(scale_mean(&profile))
}

/// Component-wise weighted average of support vectors (uniform by default).
pub fn aggregate(
    vectors: &[SupportVector],
    weights: Option<&[f64]>,
) -> Result<SupportVector, SentimentError> {
    if vectors.is_empty() {
        return Err(SentimentError::EmptyPopulation);
    }
    let mut acc = [0.0; 4];
    match weights {
        None => {
            for v in vectors {
                for (a, w) in acc.iter_mut().zip(v.weights()) {
                    *a += w;
                }
            }
        }
        Some(ws) => {
            if ws.len() != vectors.len()
                || ws.iter().any(|w| !w.is_finite() || *w < 0.0)
                || ws.iter().all(|w| *w == 0.0)
            {
                return Err(SentimentError::InvalidWeights);
            }
            for (v, &k) in vectors.iter().zip(ws) {
                for (a, w) in acc.iter_mut().zip(v.weights()) {
                    *a += k * w;
                }
            }
        }
    }
    SupportVector::normalized(acc).ok_or(SentimentError::EmptyPopulation)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Local,
    Regional,
    Global,
}

/// Fractions of the round at which the displayed scope widens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScopeSchedule {
    pub local_until: f64,
    pub regional_until: f64,
}

impl Default for ScopeSchedule {
    fn default() -> Self {
        ScopeSchedule {
            local_until: 0.4,
            regional_until: 0.7,
        }
    }
}

impl ScopeSchedule {
    pub fn is_valid(&self) -> bool {
        0.0 < self.local_until
            && self.local_until < self.regional_until
            && self.regional_until < 1.0
    }
}

pub fn scope_at(elapsed_fraction: f64, sched: &ScopeSchedule) -> Scope {
    if elapsed_fraction < sched.local_until {
        Scope::Local
    } else if elapsed_fraction < sched.regional_until {
        Scope::Regional
    } else {
        Scope::Global
    }
}

/// The subgroup plus its ring neighbours in partition order.
///
/// Returned in partition order; an unknown subgroup yields an empty list.
pub fn region_of(subgroup: &SubgroupId, all: &[SubgroupId]) -> Vec<SubgroupId> {
    let Some(pos) = all.iter().position(|g| g == subgroup) else {
        return Vec::new();
    };
    let n = all.len();
    let mut picked = [pos, (pos + 1) % n, (pos + n - 1) % n];
    picked.sort_unstable();
    let mut out: Vec<SubgroupId> = Vec::with_capacity(3);
    for i in picked {
        if !out.contains(&all[i]) {
            out.push(all[i].clone());
        }
    }
    out
}

/// Aggregated view broadcast at one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportSnapshot {
    /// Milliseconds since round start.
    pub time: u64,
    pub scope: Scope,
    pub profile: SupportVector,
    pub weighted_mean: f64,
}

impl SupportSnapshot {
    pub fn new(time: u64, scope: Scope, profile: SupportVector) -> Self {
        SupportSnapshot {
            time,
            scope,
            weighted_mean: profile.weighted_mean(),
            profile,
        }
    }

    /// Whether `weighted_mean` re-derives from `profile` (to 1e-12).
    pub fn is_consistent(&self) -> bool {
        (scale_mean(&self.profile.weights()) - self.weighted_mean).abs() <= 1e-12
    }
}

/// Global weighted mean sampled once per snapshot tick.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SentimentSeries {
    points: Vec<(u64, f64)>,
}

impl SentimentSeries {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a sample; returns `false` (and drops it) unless `time` is
    /// strictly after the previous sample.
    pub fn push(&mut self, time: u64, mean: f64) -> bool {
        if self.points.last().is_some_and(|(t, _)| *t >= time) {
            return false;
        }
        self.points.push((time, mean));
        true
    }

    pub fn points(&self) -> &[(u64, f64)] {
        &self.points
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sv(w: [f64; 4]) -> SupportVector {
        SupportVector::new(w).unwrap()
    }

    fn ids(n: usize) -> Vec<SubgroupId> {
        (1..=n)
            .map(|i| SubgroupId(alloc::format!("g{i}")))
            .collect()
    }

    #[test]
    fn weighted_mean_examples() {
        assert_eq!(weighted_mean([0.25; 4]).unwrap(), 0.0);
        assert_eq!(weighted_mean([1.0, 0.0, 0.0, 0.0]).unwrap(), -2.0);
        assert!((weighted_mean([0.4, 0.2, 0.3, 0.1]).unwrap() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn weighted_mean_rejects_bad_profiles() {
        assert!(matches!(
            weighted_mean([0.5, 0.6, 0.0, 0.0]),
            Err(SentimentError::MalformedProfile(_))
        ));
        assert!(weighted_mean([1.1, -0.1, 0.0, 0.0]).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let a = sv([1.0, 0.0, 0.0, 0.0]);
        let d = sv([0.0, 0.0, 0.0, 1.0]);
        let x = sv([0.1, 0.2, 0.3, 0.4]);
        assert_eq!(aggregate(&[x, x], None).unwrap(), x);
        let even = aggregate(&[a, d], None).unwrap();
        assert_eq!(even.weights(), [0.5, 0.0, 0.0, 0.5]);
        assert_eq!(even.weighted_mean(), 0.0);
        let skewed = aggregate(&[a, d], Some(&[2.0, 1.0])).unwrap();
        let expect = [2.0 / 3.0, 0.0, 0.0, 1.0 / 3.0];
        for (got, want) in skewed.weights().iter().zip(expect) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((skewed.weighted_mean() + 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn aggregate_errors() {
        assert_eq!(aggregate(&[], None), Err(SentimentError::EmptyPopulation));
        let a = sv([1.0, 0.0, 0.0, 0.0]);
        assert_eq!(
            aggregate(&[a], Some(&[0.0])),
            Err(SentimentError::InvalidWeights)
        );
        assert_eq!(
            aggregate(&[a], Some(&[-1.0])),
            Err(SentimentError::InvalidWeights)
        );
        assert_eq!(
            aggregate(&[a, a], Some(&[1.0])),
            Err(SentimentError::InvalidWeights)
        );
    }

    #[test]
    fn scope_examples() {
        let s = ScopeSchedule::default();
        assert_eq!(scope_at(0.2, &s), Scope::Local);
        assert_eq!(scope_at(0.5, &s), Scope::Regional);
        assert_eq!(scope_at(0.9, &s), Scope::Global);
        assert_eq!(scope_at(0.4, &s), Scope::Regional);
        assert!(s.is_valid());
        assert!(!ScopeSchedule {
            local_until: 0.7,
            regional_until: 0.4
        }
        .is_valid());
    }

    #[test]
    fn region_examples() {
        let six = ids(6);
        assert_eq!(
            region_of(&six[1], &six),
            vec![six[0].clone(), six[1].clone(), six[2].clone()]
        );
        assert_eq!(
            region_of(&six[0], &six),
            vec![six[0].clone(), six[1].clone(), six[5].clone()]
        );
        let two = ids(2);
        assert_eq!(region_of(&two[0], &two), two);
        let one = ids(1);
        assert_eq!(region_of(&one[0], &one), one);
        assert!(region_of(&SubgroupId::from("zz"), &six).is_empty());
    }

    #[test]
    fn snapshot_recomputes() {
        let s = SupportSnapshot::new(5000, Scope::Global, sv([0.4, 0.2, 0.3, 0.1]));
        assert!(s.is_consistent());
        let mut bad = s.clone();
        bad.weighted_mean = 0.3;
        assert!(!bad.is_consistent());
    }

    #[test]
    fn series_times_strictly_increase() {
        let mut s = SentimentSeries::new();
        assert!(s.push(5000, 0.1));
        assert!(!s.push(5000, 0.2));
        assert!(s.push(10000, 0.3));
        assert_eq!(s.points().len(), 2);
    }
}
