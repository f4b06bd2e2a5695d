//! Deliberative matching: exposure tracking and challenge-driven routing.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::analyzer::{CanonicalKey, Insight};
use crate::domain::SubgroupId;

/// Which insight keys each subgroup has seen, raised locally or routed in.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExposureLedger {
    exposed: BTreeMap<SubgroupId, BTreeSet<CanonicalKey>>,
}

impl ExposureLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns `true` if the key was new for the subgroup.
    pub fn mark(&mut self, subgroup: &SubgroupId, key: CanonicalKey) -> bool {
        self.exposed
            .entry(subgroup.clone())
            .or_default()
            .insert(key)
    }

    pub fn is_exposed(&self, subgroup: &SubgroupId, key: CanonicalKey) -> bool {
        self.exposed
            .get(subgroup)
            .is_some_and(|set| set.contains(&key))
    }

    pub fn exposure_count(&self, subgroup: &SubgroupId) -> usize {
        self.exposed.get(subgroup).map_or(0, BTreeSet::len)
    }

    pub fn keys(&self, subgroup: &SubgroupId) -> impl Iterator<Item = CanonicalKey> + '_ {
        self.exposed.get(subgroup).into_iter().flatten().copied()
    }

    pub fn subgroups(&self) -> impl Iterator<Item = &SubgroupId> {
        self.exposed.keys()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsightEntry {
    pub index: usize,
    /// The first registration of this key.
    pub insight: Insight,
    pub raise_count: u32,
    pub share_count: u32,
}

/// Registered insights in arrival order, unique by canonical key.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InsightRegistry {
    entries: Vec<InsightEntry>,
    #[serde(skip)]
    by_key: BTreeMap<CanonicalKey, usize>,
}

impl InsightRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[InsightEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: CanonicalKey) -> Option<&InsightEntry> {
        self.by_key.get(&key).map(|&i| &self.entries[i])
    }

    fn upsert(&mut self, insight: &Insight) -> usize {
        if let Some(&i) = self.by_key.get(&insight.canonical_key) {
            self.entries[i].raise_count += 1;
            return i;
        }
        let index = self.entries.len();
        self.by_key.insert(insight.canonical_key, index);
        self.entries.push(InsightEntry {
            index,
            insight: insight.clone(),
            raise_count: 1,
            share_count: 0,
        });
        index
    }
}

/// Current lean of each subgroup on the `-2..=+2` scale.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrevailingOpinion {
    by_subgroup: BTreeMap<SubgroupId, f64>,
}

impl PrevailingOpinion {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, subgroup: SubgroupId, mean: f64) {
        self.by_subgroup.insert(subgroup, mean.clamp(-2.0, 2.0));
    }

    /// Unknown subgroups are treated as undecided.
    pub fn get(&self, subgroup: &SubgroupId) -> f64 {
        self.by_subgroup.get(subgroup).copied().unwrap_or(0.0)
    }
}

/// `-side * prevailing`: positive when the insight argues against the lean.
pub fn challenge_score(insight: &Insight, prevailing: f64) -> f64 {
    -insight.side.sign() * prevailing
}

/// Ordering of candidates, best first: higher score, then higher conviction,
/// then lower share count, then earlier registration.
fn rank(a: &InsightEntry, b: &InsightEntry, prevailing: f64) -> Ordering {
    let sa = challenge_score(&a.insight, prevailing);
    let sb = challenge_score(&b.insight, prevailing);
    sb.partial_cmp(&sa)
        .unwrap_or(Ordering::Equal)
        .then_with(|| {
            b.insight
                .conviction
                .partial_cmp(&a.insight.conviction)
                .unwrap_or(Ordering::Equal)
        })
        .then_with(|| a.share_count.cmp(&b.share_count))
        .then_with(|| a.index.cmp(&b.index))
}

/// The most challenging insight the subgroup has not been exposed to.
pub fn select_for<'r>(
    subgroup: &SubgroupId,
    ledger: &ExposureLedger,
    registry: &'r InsightRegistry,
    prevailing: &PrevailingOpinion,
) -> Option<&'r InsightEntry> {
    let lean = prevailing.get(subgroup);
    registry
        .entries
        .iter()
        .filter(|e| {
            e.insight.origin_subgroup != *subgroup
                && !ledger.is_exposed(subgroup, e.insight.canonical_key)
        })
        .min_by(|a, b| rank(a, b, lean))
}

/// Registry, exposure ledger, and prevailing opinions for one round.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchingEngine {
    pub registry: InsightRegistry,
    pub ledger: ExposureLedger,
    pub prevailing: PrevailingOpinion,
}

impl MatchingEngine {
    pub fn new() -> Self {
        Self::default()
    }

    /// Index of the canonical entry; the raising subgroup becomes exposed.
    pub fn register_insight(&mut self, insight: &Insight) -> usize {
        let index = self.registry.upsert(insight);
        self.ledger
            .mark(&insight.origin_subgroup, insight.canonical_key);
        index
    }

    pub fn select_for(&self, subgroup: &SubgroupId) -> Option<&InsightEntry> {
        select_for(subgroup, &self.ledger, &self.registry, &self.prevailing)
    }

    pub fn mark_exposed(&mut self, subgroup: &SubgroupId, insight: &Insight) -> bool {
        self.ledger.mark(subgroup, insight.canonical_key)
    }

    /// Record that the insight was voiced in `subgroup`.
    pub fn record_share(&mut self, subgroup: &SubgroupId, key: CanonicalKey) {
        if let Some(&i) = self.registry.by_key.get(&key) {
            self.registry.entries[i].share_count += 1;
            let insight = self.registry.entries[i].insight.clone();
            self.mark_exposed(subgroup, &insight);
        }
    }

    /// Rebuild lookup tables after deserialization.
    pub fn reindex(&mut self) {
        self.registry.by_key = self
            .registry
            .entries
            .iter()
            .map(|e| (e.insight.canonical_key, e.index))
            .collect();
    }
}
