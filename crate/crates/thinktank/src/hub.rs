//! Registry of running sessions for one server process.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use thinktank_core::analyzer::MockAnalyzer;
use thinktank_core::session::SessionConfig;

use crate::analyzer_http::{HttpAnalyzer, HttpAnalyzerConfig};
use crate::clock::{Clock, WallClock};
use crate::host::{BoxedAnalyzer, HostError, SessionHandle, SessionHost};

#[derive(Debug, Clone, PartialEq)]
pub enum AnalyzerKind {
    Mock,
    Http(HttpAnalyzerConfig),
}

impl AnalyzerKind {
    pub fn build(&self) -> BoxedAnalyzer {
        match self {
            AnalyzerKind::Mock => Box::new(MockAnalyzer::default()),
            AnalyzerKind::Http(cfg) => Box::new(HttpAnalyzer::new(cfg.clone())),
        }
    }
}

pub struct HubSettings {
    pub log_dir: Option<PathBuf>,
    pub analyzer: AnalyzerKind,
    /// Used when a create request carries no config.
    pub default_config: Option<SessionConfig>,
    /// Overrides the seed of every created session.
    pub seed: Option<u64>,
    pub clock: Arc<dyn Clock>,
}

impl Default for HubSettings {
    fn default() -> Self {
        HubSettings {
            log_dir: None,
            analyzer: AnalyzerKind::Mock,
            default_config: None,
            seed: None,
            clock: Arc::new(WallClock::new()),
        }
    }
}

pub struct Hub {
    settings: HubSettings,
    sessions: Mutex<BTreeMap<String, SessionHost>>,
    next_id: Mutex<u64>,
}

impl Hub {
    pub fn new(settings: HubSettings) -> Self {
        Hub {
            settings,
            sessions: Mutex::new(BTreeMap::new()),
            next_id: Mutex::new(1),
        }
    }

    pub fn default_config(&self) -> Option<&SessionConfig> {
        self.settings.default_config.as_ref()
    }

    /// Start a session with id `s1`, `s2`, ... and return its handle.
    pub fn create(&self, mut config: SessionConfig) -> Result<SessionHandle, HostError> {
        if let Some(seed) = self.settings.seed {
            config.seed = seed;
        }
        config
            .validate()
            .map_err(|e| HostError::Session(e.into()))?;
        let id = {
            let mut n = self.next_id.lock().expect("hub lock");
            let id = format!("s{n}");
            *n += 1;
            id
        };
        let log_path = self
            .settings
            .log_dir
            .as_ref()
            .map(|d| d.join(format!("{id}.jsonl")));
        let host = SessionHost::spawn(
            &id,
            config,
            self.settings.analyzer.build(),
            self.settings.clock.clone(),
            log_path,
        )?;
        let handle = host.handle();
        self.sessions.lock().expect("hub lock").insert(id, host);
        Ok(handle)
    }

    pub fn get(&self, id: &str) -> Option<SessionHandle> {
        self.sessions
            .lock()
            .expect("hub lock")
            .get(id)
            .map(SessionHost::handle)
    }

    pub fn ids(&self) -> Vec<String> {
        self.sessions
            .lock()
            .expect("hub lock")
            .keys()
            .cloned()
            .collect()
    }
}
