//! Core engine for large-group deliberation sessions.
//!
//! A session splits its participants into small chat subgroups ("Thinktanks"),
//! each observed by a surrogate agent. Insights raised in one subgroup are
//! routed into the others by the matching engine, per-participant stances are
//! folded into support vectors, and the population profile is reduced to a
//! weighted collective forecast on the `-2..=+2` scale.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no IO. Time enters
//! only as explicit millisecond arguments, randomness only through seeds, and
//! analysis through the [`analyzer::DialogAnalyzer`] trait. The std companion
//! crate supplies clocks, transports, and the on-disk log.

#![no_std]

extern crate alloc;

pub mod analyzer;
pub mod domain;
pub mod forecast;
pub mod matching;
pub mod replay;
pub mod scoring;
pub mod sentiment;
pub mod session;
pub mod stats;
pub mod surrogate;

pub use analyzer::{
    AnalyzerError, AssessedStance, CanonicalKey, DialogAnalyzer, Insight, MockAnalyzer, Stance,
    SupportVector,
};
pub use domain::{
    Author, ChatMessage, ForecastOption, ForecastQuestion, InsightId, ParticipantId, QuestionId,
    RiskPoints, ScaleMapping, Side, SubgroupId, Thinktank,
};
pub use forecast::{finalize, CollectiveForecast, Pick, TOSSUP_BAND};
pub use matching::{ExposureLedger, InsightRegistry, MatchingEngine, PrevailingOpinion};
pub use replay::{replay, LogProjection, ReplayAnalyzer, ReplayError};
pub use sentiment::{Scope, ScopeSchedule, SupportSnapshot};
pub use session::{EventRecord, Frame, SessionConfig, SessionEngine, SessionError};
