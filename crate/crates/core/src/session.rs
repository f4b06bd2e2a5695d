//! Sans-IO session state machine and its append-only event log.
//!
//! Every command takes the current session time in milliseconds. Scheduled
//! work (timer frames, snapshot ticks, agent routing, round finalization) runs
//! inside [`SessionEngine::advance_to`], which every command calls first, so
//! the log is a pure function of the command sequence and its timestamps.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::analyzer::{
    smooth_update, stance_to_support_with, AssessedStance, CanonicalKey, DialogAnalyzer, Insight,
    SupportVector, ASSESSMENT_WINDOW, DEFAULT_SMOOTHING_ALPHA,
};
use crate::domain::{
    partition_participants, validate_question, Author, ChatMessage, ForecastOption,
    ForecastQuestion, InsightId, Participant, ParticipantId, PartitionError, QuestionViolation,
    ScaleMapping, SubgroupId, Thinktank,
};
use crate::forecast::{finalize_with, CollectiveForecast, Pick};
use crate::matching::{challenge_score, MatchingEngine};
use crate::sentiment::{aggregate, region_of, scope_at, Scope, ScopeSchedule, SentimentSeries};
use crate::surrogate::{self, AgentState, DEFAULT_MIN_GAP_MS};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_TARGET_SUBGROUP_SIZE: usize = 5;
pub const MAX_SUBGROUP_SIZE: usize = 8;
pub const DEFAULT_SNAPSHOT_INTERVAL_MS: u64 = 5_000;
const TIMER_INTERVAL_MS: u64 = 1_000;

fn default_target() -> usize {
    DEFAULT_TARGET_SUBGROUP_SIZE
}
fn default_snapshot_interval() -> u64 {
    DEFAULT_SNAPSHOT_INTERVAL_MS
}
fn default_min_gap() -> u64 {
    DEFAULT_MIN_GAP_MS
}
fn default_alpha() -> f64 {
    DEFAULT_SMOOTHING_ALPHA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub questions: Vec<ForecastQuestion>,
    #[serde(default = "default_target")]
    pub target_subgroup_size: usize,
    #[serde(default = "default_snapshot_interval")]
    pub snapshot_interval_ms: u64,
    #[serde(default = "default_min_gap")]
    pub agent_min_gap_ms: u64,
    #[serde(default)]
    pub scope_schedule: ScopeSchedule,
    #[serde(default = "default_alpha")]
    pub smoothing_alpha: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SessionConfig {
    pub fn new(questions: Vec<ForecastQuestion>) -> Self {
        SessionConfig {
            questions,
            target_subgroup_size: DEFAULT_TARGET_SUBGROUP_SIZE,
            snapshot_interval_ms: DEFAULT_SNAPSHOT_INTERVAL_MS,
            agent_min_gap_ms: DEFAULT_MIN_GAP_MS,
            scope_schedule: ScopeSchedule::default(),
            smoothing_alpha: DEFAULT_SMOOTHING_ALPHA,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.questions.is_empty() {
            return Err(ConfigError::NoQuestions);
        }
        let mut ids = BTreeSet::new();
        for q in &self.questions {
            if !ids.insert(&q.id) {
                return Err(ConfigError::DuplicateQuestion(q.id.to_string()));
            }
            let violations = validate_question(q);
            if !violations.is_empty() {
                return Err(ConfigError::InvalidQuestion {
                    id: q.id.to_string(),
                    violations,
                });
            }
        }
        if !(2..=MAX_SUBGROUP_SIZE).contains(&self.target_subgroup_size) {
            return Err(ConfigError::SubgroupSize(self.target_subgroup_size));
        }
        if self.snapshot_interval_ms == 0 {
            return Err(ConfigError::ZeroInterval);
        }
        if !self.scope_schedule.is_valid() {
            return Err(ConfigError::ScopeSchedule);
        }
        if !(self.smoothing_alpha > 0.0 && self.smoothing_alpha <= 1.0) {
            return Err(ConfigError::SmoothingAlpha);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("a session needs at least one question")]
    NoQuestions,
    #[error("duplicate question id {0}")]
    DuplicateQuestion(String),
    #[error("question {id} is invalid: {violations:?}")]
    InvalidQuestion {
        id: String,
        violations: Vec<QuestionViolation>,
    },
    #[error("target subgroup size {0} outside 2..=8")]
    SubgroupSize(usize),
    #[error("snapshot interval must be positive")]
    ZeroInterval,
    #[error("scope schedule must satisfy 0 < local_until < regional_until < 1")]
    ScopeSchedule,
    #[error("smoothing alpha must lie in (0, 1]")]
    SmoothingAlpha,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SessionError {
    #[error("invalid config: {0}")]
    InvalidConfig(#[from] ConfigError),
    #[error("a round is already in progress")]
    RoundInProgress,
    #[error("no round is in progress")]
    NotInRound,
    #[error("unknown participant {0}")]
    UnknownParticipant(ParticipantId),
    #[error("participant {0} already joined")]
    AlreadyJoined(ParticipantId),
    #[error("participants are already partitioned")]
    PartitionFrozen,
    #[error("empty chat text")]
    EmptyText,
    #[error("no question at index {0}")]
    UnknownRound(usize),
    #[error("round {0} was already played")]
    RoundAlreadyPlayed(usize),
    #[error("session has ended")]
    SessionEnded,
    #[error("cannot partition: {0}")]
    Partition(#[from] PartitionError),
}

impl SessionError {
    /// Stable code carried by error frames.
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::InvalidConfig(_) => "invalid_config",
            SessionError::RoundInProgress => "round_in_progress",
            SessionError::NotInRound => "not_in_round",
            SessionError::UnknownParticipant(_) => "unknown_participant",
            SessionError::AlreadyJoined(_) => "already_joined",
            SessionError::PartitionFrozen => "partition_frozen",
            SessionError::EmptyText => "empty_text",
            SessionError::UnknownRound(_) => "unknown_round",
            SessionError::RoundAlreadyPlayed(_) => "round_already_played",
            SessionError::SessionEnded => "session_ended",
            SessionError::Partition(_) => "too_few_participants",
        }
    }
}

/// Support aggregated over the subgroups one subgroup can currently see.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupView {
    pub subgroup: SubgroupId,
    pub covers: Vec<SubgroupId>,
    pub profile: SupportVector,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Event {
    SessionCreated {
        session_id: String,
        config: SessionConfig,
    },
    ParticipantJoined {
        participant_id: ParticipantId,
        display_name: String,
    },
    PartitionAssigned {
        seed: u64,
        thinktanks: Vec<Thinktank>,
    },
    RoundStarted {
        round: usize,
        question: ForecastQuestion,
        duration_s: u32,
        prompt: String,
    },
    Chat {
        round: usize,
        message: ChatMessage,
    },
    AgentMessage {
        round: usize,
        message: ChatMessage,
        insight_id: InsightId,
    },
    StanceAssessed {
        round: usize,
        stance: AssessedStance,
        support: SupportVector,
    },
    InsightRegistered {
        round: usize,
        index: usize,
        insight: Insight,
        raise_count: u32,
    },
    InsightRouted {
        round: usize,
        subgroup: SubgroupId,
        insight_id: InsightId,
        canonical_key: CanonicalKey,
        score: f64,
    },
    Snapshot {
        round: usize,
        elapsed_ms: u64,
        scope: Scope,
        profile: SupportVector,
        weighted_mean: f64,
        views: Vec<SubgroupView>,
    },
    RoundFinalized {
        round: usize,
        forecast: CollectiveForecast,
    },
    SessionEnded {
        rounds_played: usize,
    },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::SessionCreated { .. } => "session_created",
            Event::ParticipantJoined { .. } => "participant_joined",
            Event::PartitionAssigned { .. } => "partition_assigned",
            Event::RoundStarted { .. } => "round_started",
            Event::Chat { .. } => "chat",
            Event::AgentMessage { .. } => "agent_message",
            Event::StanceAssessed { .. } => "stance_assessed",
            Event::InsightRegistered { .. } => "insight_registered",
            Event::InsightRouted { .. } => "insight_routed",
            Event::Snapshot { .. } => "snapshot",
            Event::RoundFinalized { .. } => "round_finalized",
            Event::SessionEnded { .. } => "session_ended",
        }
    }
}

/// One line of the session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub schema_version: u32,
    pub seq: u64,
    pub time_ms: u64,
    #[serde(flatten)]
    pub event: Event,
}

/// Messages pushed to connected clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Frame {
    Hello {
        session_id: String,
    },
    Joined {
        participant_id: ParticipantId,
        display_name: String,
        subgroup: Option<SubgroupId>,
    },
    RoundStarted {
        round: usize,
        question: ForecastQuestion,
        options: Vec<ForecastOption>,
        duration_s: u32,
        prompt: String,
    },
    Timer {
        round: usize,
        remaining_s: u64,
    },
    Chat {
        author: String,
        text: String,
        subgroup: SubgroupId,
        seq: u64,
    },
    Agent {
        text: String,
        insight_id: InsightId,
        subgroup: SubgroupId,
        seq: u64,
    },
    Snapshot {
        scope: Scope,
        profile: [f64; 4],
        mean: f64,
    },
    RoundResult {
        round: usize,
        wcf: f64,
        pick: Pick,
        risk: Option<u8>,
        tossup: bool,
    },
    Error {
        code: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Recipient {
    All,
    Subgroup(SubgroupId),
    Participant(ParticipantId),
}

/// Output of one command: new log records and frames to deliver.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Effects {
    pub events: Vec<EventRecord>,
    pub frames: Vec<(Recipient, Frame)>,
}

impl Effects {
    fn extend(&mut self, other: Effects) {
        self.events.extend(other.events);
        self.frames.extend(other.frames);
    }
}

/// Final state of a played round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub round: usize,
    pub forecast: CollectiveForecast,
    pub matching: MatchingEngine,
    pub series: SentimentSeries,
}

#[derive(Debug, Clone, PartialEq)]
struct RoundState {
    index: usize,
    question: ForecastQuestion,
    mapping: ScaleMapping,
    started_at: u64,
    duration_ms: u64,
    next_timer_at: u64,
    next_snapshot_at: u64,
    transcripts: BTreeMap<SubgroupId, Vec<ChatMessage>>,
    supports: BTreeMap<ParticipantId, SupportVector>,
    last_assessed: BTreeMap<ParticipantId, u64>,
    agents: BTreeMap<SubgroupId, AgentState>,
    dme: MatchingEngine,
    series: SentimentSeries,
}

impl RoundState {
    fn ends_at(&self) -> u64 {
        self.started_at + self.duration_ms
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Phase {
    Lobby,
    InRound(Box<RoundState>),
    BetweenRounds,
    Ended,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseKind {
    Lobby,
    InRound(usize),
    BetweenRounds,
    Ended,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionEngine {
    session_id: String,
    config: SessionConfig,
    now: u64,
    log: Vec<EventRecord>,
    participants: Vec<Participant>,
    thinktanks: Vec<Thinktank>,
    phase: Phase,
    played: BTreeSet<usize>,
    outcomes: Vec<RoundOutcome>,
}

impl SessionEngine {
    /// Validate the config and open the session in the lobby.
    pub fn create(
        session_id: impl Into<String>,
        config: SessionConfig,
        now: u64,
    ) -> Result<(Self, Effects), SessionError> {
        config.validate()?;
        let mut engine = SessionEngine {
            session_id: session_id.into(),
            config,
            now,
            log: Vec::new(),
            participants: Vec::new(),
            thinktanks: Vec::new(),
            phase: Phase::Lobby,
            played: BTreeSet::new(),
            outcomes: Vec::new(),
        };
        let mut fx = Effects::default();
        let event = Event::SessionCreated {
            session_id: engine.session_id.clone(),
            config: engine.config.clone(),
        };
        engine.emit(&mut fx, event);
        Ok((engine, fx))
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn log(&self) -> &[EventRecord] {
        &self.log
    }

    pub fn participants(&self) -> &[Participant] {
        &self.participants
    }

    pub fn thinktanks(&self) -> &[Thinktank] {
        &self.thinktanks
    }

    pub fn outcomes(&self) -> &[RoundOutcome] {
        &self.outcomes
    }

    pub fn phase(&self) -> PhaseKind {
        match &self.phase {
            Phase::Lobby => PhaseKind::Lobby,
            Phase::InRound(r) => PhaseKind::InRound(r.index),
            Phase::BetweenRounds => PhaseKind::BetweenRounds,
            Phase::Ended => PhaseKind::Ended,
        }
    }

    /// Questions not yet played, by index.
    pub fn pending_rounds(&self) -> Vec<usize> {
        (0..self.config.questions.len())
            .filter(|i| !self.played.contains(i))
            .collect()
    }

    pub fn subgroup_of(&self, participant: &ParticipantId) -> Option<&SubgroupId> {
        self.participants
            .iter()
            .find(|p| &p.id == participant)
            .and_then(|p| p.subgroup_id.as_ref())
    }

    /// Matching state of the live round, if any.
    pub fn live_matching(&self) -> Option<&MatchingEngine> {
        match &self.phase {
            Phase::InRound(r) => Some(&r.dme),
            _ => None,
        }
    }

    /// Current (smoothed) support of a participant in the live round.
    pub fn support_of(&self, participant: &ParticipantId) -> Option<SupportVector> {
        match &self.phase {
            Phase::InRound(r) => r.supports.get(participant).copied(),
            _ => None,
        }
    }

    /// Transcript of a subgroup in the live round.
    pub fn transcript(&self, subgroup: &SubgroupId) -> &[ChatMessage] {
        match &self.phase {
            Phase::InRound(r) => r.transcripts.get(subgroup).map_or(&[], Vec::as_slice),
            _ => &[],
        }
    }

    /// Time at which the next scheduled item is due, if a round is running.
    pub fn next_deadline(&self) -> Option<u64> {
        match &self.phase {
            Phase::InRound(r) => Some(r.next_timer_at.min(r.next_snapshot_at).min(r.ends_at())),
            _ => None,
        }
    }

    fn emit(&mut self, fx: &mut Effects, event: Event) {
        let record = EventRecord {
            schema_version: SCHEMA_VERSION,
            seq: self.log.len() as u64,
            time_ms: self.now,
            event,
        };
        self.log.push(record.clone());
        fx.events.push(record);
    }

    fn ensure_open(&self) -> Result<(), SessionError> {
        if self.phase == Phase::Ended {
            Err(SessionError::SessionEnded)
        } else {
            Ok(())
        }
    }

    pub fn join(
        &mut self,
        participant_id: ParticipantId,
        display_name: impl Into<String>,
        now: u64,
    ) -> Result<Effects, SessionError> {
        let mut fx = self.advance_to(now);
        self.ensure_open()?;
        if self.participants.iter().any(|p| p.id == participant_id) {
            return Err(SessionError::AlreadyJoined(participant_id));
        }
        if !self.thinktanks.is_empty() {
            return Err(SessionError::PartitionFrozen);
        }
        let display_name = display_name.into();
        self.participants.push(Participant {
            id: participant_id.clone(),
            display_name: display_name.clone(),
            subgroup_id: None,
        });
        self.emit(
            &mut fx,
            Event::ParticipantJoined {
                participant_id: participant_id.clone(),
                display_name: display_name.clone(),
            },
        );
        fx.frames.push((
            Recipient::Participant(participant_id.clone()),
            Frame::Joined {
                participant_id,
                display_name,
                subgroup: None,
            },
        ));
        Ok(fx)
    }

    /// Append a question in the lobby or between rounds.
    pub fn add_question(&mut self, question: ForecastQuestion) -> Result<usize, SessionError> {
        self.ensure_open()?;
        if matches!(self.phase, Phase::InRound(_)) {
            return Err(SessionError::RoundInProgress);
        }
        let mut next = self.config.clone();
        next.questions.push(question);
        next.validate()?;
        self.config = next;
        Ok(self.config.questions.len() - 1)
    }

    pub fn start_round(&mut self, index: usize, now: u64) -> Result<Effects, SessionError> {
        let mut fx = self.advance_to(now);
        self.ensure_open()?;
        if matches!(self.phase, Phase::InRound(_)) {
            return Err(SessionError::RoundInProgress);
        }
        let question = self
            .config
            .questions
            .get(index)
            .cloned()
            .ok_or(SessionError::UnknownRound(index))?;
        if self.played.contains(&index) {
            return Err(SessionError::RoundAlreadyPlayed(index));
        }
        if self.thinktanks.is_empty() {
            let ids: Vec<ParticipantId> = self.participants.iter().map(|p| p.id.clone()).collect();
            let thinktanks =
                partition_participants(&ids, self.config.target_subgroup_size, self.config.seed)?;
            for tank in &thinktanks {
                for member in &tank.member_ids {
                    if let Some(p) = self.participants.iter_mut().find(|p| &p.id == member) {
                        p.subgroup_id = Some(tank.id.clone());
                    }
                }
            }
            self.thinktanks = thinktanks.clone();
            self.emit(
                &mut fx,
                Event::PartitionAssigned {
                    seed: self.config.seed,
                    thinktanks,
                },
            );
            for p in &self.participants {
                fx.frames.push((
                    Recipient::Participant(p.id.clone()),
                    Frame::Joined {
                        participant_id: p.id.clone(),
                        display_name: p.display_name.clone(),
                        subgroup: p.subgroup_id.clone(),
                    },
                ));
            }
        }

        let duration_ms = question.round_duration_ms();
        let prompt = moderator_prompt(&question);
        let round = RoundState {
            index,
            mapping: question.mapping().unwrap_or_default(),
            started_at: self.now,
            duration_ms,
            next_timer_at: self.now + TIMER_INTERVAL_MS,
            next_snapshot_at: self.now + self.config.snapshot_interval_ms,
            transcripts: self
                .thinktanks
                .iter()
                .map(|t| (t.id.clone(), Vec::new()))
                .collect(),
            supports: self
                .thinktanks
                .iter()
                .flat_map(|t| t.member_ids.iter().cloned())
                .map(|p| (p, SupportVector::UNIFORM))
                .collect(),
            last_assessed: BTreeMap::new(),
            agents: self
                .thinktanks
                .iter()
                .map(|t| (t.id.clone(), AgentState::new(t.id.clone())))
                .collect(),
            dme: MatchingEngine::new(),
            series: SentimentSeries::new(),
            question: question.clone(),
        };
        self.played.insert(index);
        self.phase = Phase::InRound(Box::new(round));
        self.emit(
            &mut fx,
            Event::RoundStarted {
                round: index,
                question: question.clone(),
                duration_s: question.round_duration,
                prompt: prompt.clone(),
            },
        );
        fx.frames.push((
            Recipient::All,
            Frame::RoundStarted {
                round: index,
                options: question.options.clone(),
                duration_s: question.round_duration,
                question,
                prompt,
            },
        ));
        fx.frames.push((
            Recipient::All,
            Frame::Timer {
                round: index,
                remaining_s: duration_ms / 1000,
            },
        ));
        Ok(fx)
    }

    /// Accept a chat line, assess its author, and let the subgroup's
    /// surrogate register any new insights. Returns the per-subgroup seq.
    pub fn ingest_chat(
        &mut self,
        participant: &ParticipantId,
        text: &str,
        now: u64,
        analyzer: &mut dyn DialogAnalyzer,
    ) -> Result<(u64, Effects), SessionError> {
        let mut fx = self.advance_to(now);
        self.ensure_open()?;
        let Some(subgroup) = self.subgroup_of(participant).cloned() else {
            return if self.participants.iter().any(|p| &p.id == participant) {
                Err(SessionError::NotInRound)
            } else {
                Err(SessionError::UnknownParticipant(participant.clone()))
            };
        };
        if text.trim().is_empty() {
            return Err(SessionError::EmptyText);
        }
        let Phase::InRound(round) = &mut self.phase else {
            return Err(SessionError::NotInRound);
        };
        let author_name = self
            .participants
            .iter()
            .find(|p| &p.id == participant)
            .map(|p| p.display_name.clone())
            .unwrap_or_default();

        let transcript = round.transcripts.entry(subgroup.clone()).or_default();
        let seq = transcript.last().map_or(1, |m| m.seq + 1);
        let message = ChatMessage {
            seq,
            timestamp: self.now,
            author: Author::Participant(participant.clone()),
            subgroup_id: subgroup.clone(),
            text: String::from(text),
            annotation: None,
        };
        transcript.push(message.clone());
        let round_index = round.index;

        let window: Vec<ChatMessage> = {
            let mine: Vec<&ChatMessage> = transcript
                .iter()
                .filter(|m| m.author.participant() == Some(participant))
                .collect();
            let skip = mine.len().saturating_sub(ASSESSMENT_WINDOW);
            mine.into_iter().skip(skip).cloned().collect()
        };
        let assessed = analyzer.assess(participant, &window, &round.question).ok();
        let stance_event = assessed.and_then(|stance| {
            let fresh = round
                .last_assessed
                .get(participant)
                .is_none_or(|&last| stance.as_of_seq > last);
            if !fresh || &stance.participant_id != participant {
                return None;
            }
            let target = stance_to_support_with(&stance, round.mapping);
            let prev = round
                .supports
                .get(participant)
                .copied()
                .unwrap_or(SupportVector::UNIFORM);
            let support = smooth_update(&prev, &target, self.config.smoothing_alpha);
            round.supports.insert(participant.clone(), support);
            round
                .last_assessed
                .insert(participant.clone(), stance.as_of_seq);
            Some(Event::StanceAssessed {
                round: round_index,
                stance,
                support,
            })
        });

        let agent = round
            .agents
            .get(&subgroup)
            .cloned()
            .unwrap_or_else(|| AgentState::new(subgroup.clone()));
        let unseen: Vec<ChatMessage> = round.transcripts[&subgroup]
            .iter()
            .filter(|m| m.seq > agent.observed_through_seq)
            .cloned()
            .collect();
        let (agent, insights) = surrogate::observe(&agent, &unseen, &round.question, analyzer);
        round.agents.insert(subgroup.clone(), agent);
        let mut registered = Vec::new();
        for insight in insights {
            if insight.origin_subgroup != subgroup || insight.reasons.is_empty() {
                continue;
            }
            let index = round.dme.register_insight(&insight);
            let raise_count = round.dme.registry.entries()[index].raise_count;
            registered.push(Event::InsightRegistered {
                round: round_index,
                index,
                insight,
                raise_count,
            });
        }

        self.emit(
            &mut fx,
            Event::Chat {
                round: round_index,
                message,
            },
        );
        fx.frames.push((
            Recipient::Subgroup(subgroup.clone()),
            Frame::Chat {
                author: author_name,
                text: String::from(text),
                subgroup,
                seq,
            },
        ));
        if let Some(e) = stance_event {
            self.emit(&mut fx, e);
        }
        for e in registered {
            self.emit(&mut fx, e);
        }
        Ok((seq, fx))
    }

    pub fn end_session(&mut self, now: u64) -> Result<Effects, SessionError> {
        let mut fx = self.advance_to(now);
        self.ensure_open()?;
        if matches!(self.phase, Phase::InRound(_)) {
            return Err(SessionError::RoundInProgress);
        }
        self.phase = Phase::Ended;
        let rounds_played = self.outcomes.len();
        self.emit(&mut fx, Event::SessionEnded { rounds_played });
        Ok(fx)
    }

    /// Run everything scheduled at or before `now`, in time order.
    pub fn advance_to(&mut self, now: u64) -> Effects {
        let mut fx = Effects::default();
        while let Phase::InRound(round) = &self.phase {
            let end = round.ends_at();
            let due = round.next_timer_at.min(round.next_snapshot_at).min(end);
            if due > now {
                break;
            }
            self.now = self.now.max(due);
            let round = match &mut self.phase {
                Phase::InRound(r) => r,
                _ => unreachable!(),
            };
            if round.next_timer_at == due {
                round.next_timer_at += TIMER_INTERVAL_MS;
                if due < end {
                    fx.frames.push((
                        Recipient::All,
                        Frame::Timer {
                            round: round.index,
                            remaining_s: (end - due).div_ceil(1000),
                        },
                    ));
                }
            }
            if round.next_snapshot_at == due {
                round.next_snapshot_at += self.config.snapshot_interval_ms;
                let tick = self.snapshot_tick();
                fx.extend(tick);
            }
            if due == end {
                let done = self.finalize_round();
                fx.extend(done);
            }
        }
        self.now = self.now.max(now);
        fx
    }

    fn members_profile(
        supports: &BTreeMap<ParticipantId, SupportVector>,
        tanks: &[&Thinktank],
    ) -> SupportVector {
        let vectors: Vec<SupportVector> = tanks
            .iter()
            .flat_map(|t| t.member_ids.iter())
            .filter_map(|p| supports.get(p).copied())
            .collect();
        aggregate(&vectors, None).unwrap_or(SupportVector::UNIFORM)
    }

    fn snapshot_tick(&mut self) -> Effects {
        let mut fx = Effects::default();
        let now = self.now;
        let all_ids: Vec<SubgroupId> = self.thinktanks.iter().map(|t| t.id.clone()).collect();
        let Phase::InRound(round) = &mut self.phase else {
            return fx;
        };
        let elapsed = now - round.started_at;
        let fraction = elapsed as f64 / round.duration_ms as f64;
        let scope = scope_at(fraction, &self.config.scope_schedule);
        let all_tanks: Vec<&Thinktank> = self.thinktanks.iter().collect();
        let global = Self::members_profile(&round.supports, &all_tanks);

        let mut views = Vec::with_capacity(self.thinktanks.len());
        for tank in &self.thinktanks {
            let covers = match scope {
                Scope::Local => alloc::vec![tank.id.clone()],
                Scope::Regional => region_of(&tank.id, &all_ids),
                Scope::Global => all_ids.clone(),
            };
            let covered: Vec<&Thinktank> = self
                .thinktanks
                .iter()
                .filter(|t| covers.contains(&t.id))
                .collect();
            let profile = Self::members_profile(&round.supports, &covered);
            let own = Self::members_profile(&round.supports, &[tank]);
            round
                .dme
                .prevailing
                .set(tank.id.clone(), own.weighted_mean());
            views.push(SubgroupView {
                subgroup: tank.id.clone(),
                covers,
                mean: profile.weighted_mean(),
                profile,
            });
        }
        round.series.push(elapsed, global.weighted_mean());
        for view in &views {
            fx.frames.push((
                Recipient::Subgroup(view.subgroup.clone()),
                Frame::Snapshot {
                    scope,
                    profile: view.profile.weights(),
                    mean: view.mean,
                },
            ));
        }

        let mut routed = Vec::new();
        for (gi, tank) in self.thinktanks.iter().enumerate() {
            let agent = round
                .agents
                .entry(tank.id.clone())
                .or_insert_with(|| AgentState::new(tank.id.clone()));
            if !surrogate::pace_gate(agent, now, self.config.agent_min_gap_ms) {
                continue;
            }
            let Some(entry) = round.dme.select_for(&tank.id) else {
                continue;
            };
            let insight = entry.insight.clone();
            let score = challenge_score(&insight, round.dme.prevailing.get(&tank.id));
            let template_seed = self
                .config
                .seed
                .wrapping_add(entry.index as u64)
                .wrapping_add(gi as u64);
            let transcript = round.transcripts.entry(tank.id.clone()).or_default();
            let seq = transcript.last().map_or(1, |m| m.seq + 1);
            let Some(message) =
                surrogate::express(agent, &insight, template_seed, &round.question, seq, now)
            else {
                continue;
            };
            transcript.push(message.clone());
            agent.last_expression_time = Some(now);
            round.dme.record_share(&tank.id, insight.canonical_key);
            fx.frames.push((
                Recipient::Subgroup(tank.id.clone()),
                Frame::Agent {
                    text: message.text.clone(),
                    insight_id: insight.id.clone(),
                    subgroup: tank.id.clone(),
                    seq,
                },
            ));
            routed.push((tank.id.clone(), message, insight, score));
        }

        let round_index = round.index;
        self.emit(
            &mut fx,
            Event::Snapshot {
                round: round_index,
                elapsed_ms: elapsed,
                scope,
                weighted_mean: global.weighted_mean(),
                profile: global,
                views,
            },
        );
        for (subgroup, message, insight, score) in routed {
            self.emit(
                &mut fx,
                Event::AgentMessage {
                    round: round_index,
                    message,
                    insight_id: insight.id.clone(),
                },
            );
            self.emit(
                &mut fx,
                Event::InsightRouted {
                    round: round_index,
                    subgroup,
                    insight_id: insight.id,
                    canonical_key: insight.canonical_key,
                    score,
                },
            );
        }
        fx
    }

    fn finalize_round(&mut self) -> Effects {
        let mut fx = Effects::default();
        let phase = core::mem::replace(&mut self.phase, Phase::BetweenRounds);
        let Phase::InRound(round) = phase else {
            self.phase = phase;
            return fx;
        };
        let tanks: Vec<&Thinktank> = self.thinktanks.iter().collect();
        let profile = Self::members_profile(&round.supports, &tanks);
        let forecast = finalize_with(profile.weights(), round.question.id.clone(), round.mapping)
            .expect("aggregated profiles are normalized");
        self.emit(
            &mut fx,
            Event::RoundFinalized {
                round: round.index,
                forecast: forecast.clone(),
            },
        );
        fx.frames.push((
            Recipient::All,
            Frame::RoundResult {
                round: round.index,
                wcf: forecast.wcf,
                pick: forecast.pick,
                risk: forecast.risk_points.map(|r| r.points()),
                tossup: forecast.is_tossup,
            },
        ));
        self.outcomes.push(RoundOutcome {
            round: round.index,
            forecast,
            matching: round.dme,
            series: round.series,
        });
        fx
    }
}

/// Moderator text shown at round start.
pub fn moderator_prompt(q: &ForecastQuestion) -> String {
    let line = match q.favorite() {
        Some(side) => alloc::format!(
            "{} are favored by {} points.",
            q.team(side),
            libm::fabs(q.spread)
        ),
        None => String::from("The game is a pick'em."),
    };
    alloc::format!(
        "{} vs {}. {} Which team will beat the spread, and should the group risk 10 or 20 points on it? \
         Back your view with reasons, and say so when you agree or disagree with others.",
        q.team_a,
        q.team_b,
        line
    )
}
