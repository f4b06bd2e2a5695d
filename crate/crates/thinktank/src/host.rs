//! Single-threaded executor for one session.
//!
//! A [`SessionHost`] owns the engine, the analyzer, and the on-disk log on a
//! dedicated thread and applies commands in arrival order. With a live clock
//! it also wakes itself for timers, snapshots, and round ends. Frames are
//! numbered per participant and kept so a reconnecting client can resume.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thinktank_core::analyzer::DialogAnalyzer;
use thinktank_core::domain::{ForecastQuestion, ParticipantId, SubgroupId, Thinktank};
use thinktank_core::session::{
    Effects, EventRecord, Frame, PhaseKind, Recipient, SessionConfig, SessionEngine, SessionError,
};
use tokio::sync::{mpsc as tmpsc, oneshot};

use crate::clock::Clock;
use crate::logfile::{LogError, LogWriter};

pub type BoxedAnalyzer = Box<dyn DialogAnalyzer + Send>;

/// A frame with its per-participant sequence number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqFrame {
    pub frame_seq: u64,
    #[serde(flatten)]
    pub frame: Frame,
}

#[derive(Debug, thiserror::Error)]
pub enum HostError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("session host is not running")]
    Unavailable,
}

impl HostError {
    pub fn code(&self) -> &'static str {
        match self {
            HostError::Session(e) => e.code(),
            HostError::Log(_) => "log_error",
            HostError::Unavailable => "unavailable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionStatus {
    pub session_id: String,
    pub phase: String,
    pub participants: usize,
    pub pending_rounds: Vec<usize>,
    pub questions: Vec<ForecastQuestion>,
    pub thinktanks: Vec<Thinktank>,
    pub log_len: usize,
}

type Reply<T> = oneshot::Sender<Result<T, HostError>>;

enum Command {
    Join {
        participant: Option<ParticipantId>,
        display_name: Option<String>,
        reply: Reply<(ParticipantId, String)>,
    },
    Attach {
        participant: ParticipantId,
        resume_from: Option<u64>,
        sink: tmpsc::UnboundedSender<SeqFrame>,
        reply: Reply<()>,
    },
    Chat {
        participant: ParticipantId,
        text: String,
        reply: Reply<u64>,
    },
    AddQuestion {
        question: ForecastQuestion,
        reply: Reply<usize>,
    },
    StartRound {
        index: usize,
        reply: Reply<()>,
    },
    EndSession {
        reply: Reply<()>,
    },
    Advance {
        reply: Reply<()>,
    },
    Log {
        since: u64,
        reply: Reply<Vec<EventRecord>>,
    },
    Frames {
        participant: ParticipantId,
        reply: Reply<Vec<SeqFrame>>,
    },
    Status {
        reply: Reply<SessionStatus>,
    },
    Shutdown,
}

/// Deferred reply from the host; await it or block on it.
pub struct Pending<T>(oneshot::Receiver<Result<T, HostError>>);

impl<T> Pending<T> {
    pub fn wait(self) -> Result<T, HostError> {
        self.0
            .blocking_recv()
            .unwrap_or(Err(HostError::Unavailable))
    }

    pub async fn get(self) -> Result<T, HostError> {
        self.0.await.unwrap_or(Err(HostError::Unavailable))
    }
}

/// Cloneable sender side of a session host.
#[derive(Clone)]
pub struct SessionHandle {
    session_id: String,
    tx: mpsc::Sender<Command>,
}

impl SessionHandle {
    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    fn send<T>(&self, make: impl FnOnce(Reply<T>) -> Command) -> Pending<T> {
        let (reply, rx) = oneshot::channel();
        // A closed channel drops `reply`, which `Pending` reports as Unavailable.
        let _ = self.tx.send(make(reply));
        Pending(rx)
    }

    /// Join with an optional id and name; missing ones are assigned.
    pub fn join(
        &self,
        participant: Option<ParticipantId>,
        display_name: Option<String>,
    ) -> Pending<(ParticipantId, String)> {
        self.send(|reply| Command::Join {
            participant,
            display_name,
            reply,
        })
    }

    /// Deliver frames to `sink`, first replaying those after `resume_from`
    /// (all of them when `None`).
    pub fn attach(
        &self,
        participant: ParticipantId,
        resume_from: Option<u64>,
        sink: tmpsc::UnboundedSender<SeqFrame>,
    ) -> Pending<()> {
        self.send(|reply| Command::Attach {
            participant,
            resume_from,
            sink,
            reply,
        })
    }

    pub fn chat(&self, participant: ParticipantId, text: impl Into<String>) -> Pending<u64> {
        let text = text.into();
        self.send(|reply| Command::Chat {
            participant,
            text,
            reply,
        })
    }

    pub fn add_question(&self, question: ForecastQuestion) -> Pending<usize> {
        self.send(|reply| Command::AddQuestion { question, reply })
    }

    pub fn start_round(&self, index: usize) -> Pending<()> {
        self.send(|reply| Command::StartRound { index, reply })
    }

    pub fn end_session(&self) -> Pending<()> {
        self.send(|reply| Command::EndSession { reply })
    }

    /// Run scheduled work up to the clock's current time.
    pub fn advance(&self) -> Pending<()> {
        self.send(|reply| Command::Advance { reply })
    }

    pub fn log(&self) -> Pending<Vec<EventRecord>> {
        self.log_since(0)
    }

    pub fn log_since(&self, since: u64) -> Pending<Vec<EventRecord>> {
        self.send(|reply| Command::Log { since, reply })
    }

    /// Every frame addressed to a participant so far.
    pub fn frames(&self, participant: ParticipantId) -> Pending<Vec<SeqFrame>> {
        self.send(|reply| Command::Frames { participant, reply })
    }

    pub fn status(&self) -> Pending<SessionStatus> {
        self.send(|reply| Command::Status { reply })
    }

    pub fn shutdown(&self) {
        let _ = self.tx.send(Command::Shutdown);
    }
}

pub struct SessionHost {
    handle: SessionHandle,
    thread: Option<JoinHandle<()>>,
}

impl SessionHost {
    /// Create the session and start its executor thread. With `log_path`,
    /// every record is appended to that file as it is produced.
    pub fn spawn(
        session_id: &str,
        config: SessionConfig,
        analyzer: BoxedAnalyzer,
        clock: Arc<dyn Clock>,
        log_path: Option<PathBuf>,
    ) -> Result<Self, HostError> {
        let (engine, fx) = SessionEngine::create(session_id, config, clock.now_ms())?;
        let mut writer = log_path.as_deref().map(LogWriter::create).transpose()?;
        if let Some(w) = writer.as_mut() {
            for r in &fx.events {
                w.append(r)?;
            }
            w.flush()?;
        }
        let (tx, rx) = mpsc::channel();
        let mut actor = Actor {
            engine,
            analyzer,
            clock,
            writer,
            outbox: Outbox::default(),
            next_guest: 1,
        };
        let thread = thread::Builder::new()
            .name(format!("session-{session_id}"))
            .spawn(move || actor.run(rx))
            .expect("spawn session thread");
        Ok(SessionHost {
            handle: SessionHandle {
                session_id: session_id.to_string(),
                tx,
            },
            thread: Some(thread),
        })
    }

    pub fn handle(&self) -> SessionHandle {
        self.handle.clone()
    }
}

impl Drop for SessionHost {
    fn drop(&mut self) {
        self.handle.shutdown();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

#[derive(Default)]
struct Mailbox {
    history: Vec<SeqFrame>,
    sinks: Vec<tmpsc::UnboundedSender<SeqFrame>>,
}

#[derive(Default)]
struct Outbox {
    boxes: BTreeMap<ParticipantId, Mailbox>,
}

impl Outbox {
    fn deliver(&mut self, to: &ParticipantId, frame: Frame) {
        let mb = self.boxes.entry(to.clone()).or_default();
        let sf = SeqFrame {
            frame_seq: mb.history.len() as u64 + 1,
            frame,
        };
        mb.sinks.retain(|s| s.send(sf.clone()).is_ok());
        mb.history.push(sf);
    }
}

struct Actor {
    engine: SessionEngine,
    analyzer: BoxedAnalyzer,
    clock: Arc<dyn Clock>,
    writer: Option<LogWriter>,
    outbox: Outbox,
    next_guest: u64,
}

impl Actor {
    fn run(&mut self, rx: mpsc::Receiver<Command>) {
        loop {
            let cmd = match self.wake_in() {
                Some(wait) => match rx.recv_timeout(wait) {
                    Ok(cmd) => Some(cmd),
                    Err(RecvTimeoutError::Timeout) => None,
                    Err(RecvTimeoutError::Disconnected) => break,
                },
                None => match rx.recv() {
                    Ok(cmd) => Some(cmd),
                    Err(_) => break,
                },
            };
            match cmd {
                None => {
                    let fx = self.engine.advance_to(self.clock.now_ms());
                    self.dispatch(fx);
                }
                Some(Command::Shutdown) => break,
                Some(cmd) => self.handle(cmd),
            }
        }
        if let Some(w) = self.writer.as_mut() {
            let _ = w.flush();
        }
    }

    fn wake_in(&self) -> Option<Duration> {
        if !self.clock.is_live() {
            return None;
        }
        let due = self.engine.next_deadline()?;
        Some(Duration::from_millis(
            due.saturating_sub(self.clock.now_ms()),
        ))
    }

    fn dispatch(&mut self, fx: Effects) {
        if let Some(w) = self.writer.as_mut() {
            let written = fx.events.iter().try_for_each(|r| w.append(r));
            if let Err(e) = written.and_then(|()| w.flush()) {
                eprintln!("session {}: {e}", self.engine.session_id());
            }
        }
        for (to, frame) in fx.frames {
            let targets: Vec<ParticipantId> = match &to {
                Recipient::Participant(p) => vec![p.clone()],
                Recipient::All => self
                    .engine
                    .participants()
                    .iter()
                    .map(|p| p.id.clone())
                    .collect(),
                Recipient::Subgroup(g) => self.members(g),
            };
            for t in targets {
                self.outbox.deliver(&t, frame.clone());
            }
        }
    }

    fn members(&self, g: &SubgroupId) -> Vec<ParticipantId> {
        self.engine
            .thinktanks()
            .iter()
            .find(|t| &t.id == g)
            .map(|t| t.member_ids.clone())
            .unwrap_or_default()
    }

    fn apply<T>(
        &mut self,
        reply: Reply<T>,
        f: impl FnOnce(&mut Self, u64) -> Result<(T, Effects), SessionError>,
    ) {
        let now = self.clock.now_ms();
        let result = f(self, now);
        let out = match result {
            Ok((value, fx)) => {
                self.dispatch(fx);
                Ok(value)
            }
            Err(e) => Err(HostError::Session(e)),
        };
        let _ = reply.send(out);
    }

    fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Join {
                participant,
                display_name,
                reply,
            } => self.apply(reply, |a, now| {
                let fx = a.engine.advance_to(now);
                a.dispatch(fx);
                let id = participant.unwrap_or_else(|| a.fresh_id());
                let name = display_name
                    .filter(|n| !n.trim().is_empty())
                    .unwrap_or_else(|| pseudonym(a.engine.participants().len()));
                let fx = a.engine.join(id.clone(), name.clone(), now)?;
                Ok(((id, name), fx))
            }),
            Command::Attach {
                participant,
                resume_from,
                sink,
                reply,
            } => {
                if !self
                    .engine
                    .participants()
                    .iter()
                    .any(|p| p.id == participant)
                {
                    let _ = reply.send(Err(SessionError::UnknownParticipant(participant).into()));
                    return;
                }
                let mb = self.outbox.boxes.entry(participant).or_default();
                let after = resume_from.unwrap_or(0);
                let replayed = mb
                    .history
                    .iter()
                    .filter(|f| f.frame_seq > after)
                    .all(|f| sink.send(f.clone()).is_ok());
                if replayed {
                    mb.sinks.push(sink);
                }
                let _ = reply.send(Ok(()));
            }
            Command::Chat {
                participant,
                text,
                reply,
            } => self.apply(reply, |a, now| {
                a.engine
                    .ingest_chat(&participant, &text, now, a.analyzer.as_mut())
            }),
            Command::AddQuestion { question, reply } => {
                let _ = reply.send(self.engine.add_question(question).map_err(Into::into));
            }
            Command::StartRound { index, reply } => {
                self.apply(reply, |a, now| Ok(((), a.engine.start_round(index, now)?)))
            }
            Command::EndSession { reply } => {
                self.apply(reply, |a, now| Ok(((), a.engine.end_session(now)?)))
            }
            Command::Advance { reply } => {
                self.apply(reply, |a, now| Ok(((), a.engine.advance_to(now))))
            }
            Command::Log { since, reply } => {
                let log = self.engine.log();
                let from = (since as usize).min(log.len());
                let _ = reply.send(Ok(log[from..].to_vec()));
            }
            Command::Frames { participant, reply } => {
                let frames = self
                    .outbox
                    .boxes
                    .get(&participant)
                    .map(|m| m.history.clone())
                    .unwrap_or_default();
                let _ = reply.send(Ok(frames));
            }
            Command::Status { reply } => {
                let e = &self.engine;
                let phase = match e.phase() {
                    PhaseKind::Lobby => "lobby".to_string(),
                    PhaseKind::InRound(i) => format!("round {i}"),
                    PhaseKind::BetweenRounds => "between_rounds".to_string(),
                    PhaseKind::Ended => "ended".to_string(),
                };
                let _ = reply.send(Ok(SessionStatus {
                    session_id: e.session_id().to_string(),
                    phase,
                    participants: e.participants().len(),
                    pending_rounds: e.pending_rounds(),
                    questions: e.config().questions.clone(),
                    thinktanks: e.thinktanks().to_vec(),
                    log_len: e.log().len(),
                }));
            }
            Command::Shutdown => {}
        }
    }

    fn fresh_id(&mut self) -> ParticipantId {
        loop {
            let id = ParticipantId(format!("guest-{}", self.next_guest));
            self.next_guest += 1;
            if !self.engine.participants().iter().any(|p| p.id == id) {
                return id;
            }
        }
    }
}

const ANIMALS: [&str; 12] = [
    "Otter", "Heron", "Lynx", "Badger", "Falcon", "Marten", "Ibis", "Puma", "Wren", "Bison",
    "Gecko", "Kestrel",
];

/// Display name for the `n`-th participant (zero-based).
pub fn pseudonym(n: usize) -> String {
    format!("{} {}", ANIMALS[n % ANIMALS.len()], n / ANIMALS.len() + 1)
}
