//! Analyzer backed by an external HTTP service.
//!
//! Requests are `{question, transcript, schema_version}`; responses must be
//! exactly `{side, conviction, reasons}`. Any transport or schema failure is
//! reported as [`AnalyzerError::BackendUnavailable`].

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thinktank_core::analyzer::{
    AnalyzerError, AssessedStance, DialogAnalyzer, Insight, Stance, ASSESSMENT_WINDOW,
};
use thinktank_core::domain::{
    Author, ChatMessage, ForecastQuestion, InsightId, ParticipantId, Side, SubgroupId,
};

pub const REQUEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct HttpAnalyzerConfig {
    pub url: String,
    pub key: Option<String>,
    pub model: Option<String>,
    pub timeout: Duration,
}

impl HttpAnalyzerConfig {
    /// Read `ANALYZER_URL`, `ANALYZER_KEY`, and `ANALYZER_MODEL`.
    pub fn from_env() -> Option<Self> {
        let url = std::env::var("ANALYZER_URL")
            .ok()
            .filter(|u| !u.is_empty())?;
        Some(HttpAnalyzerConfig {
            url,
            key: std::env::var("ANALYZER_KEY").ok(),
            model: std::env::var("ANALYZER_MODEL").ok(),
            timeout: Duration::from_secs(10),
        })
    }
}

#[derive(Debug, Serialize)]
struct TranscriptLine<'a> {
    seq: u64,
    author: &'a str,
    text: &'a str,
}

#[derive(Debug, Serialize)]
struct Request<'a> {
    question: &'a ForecastQuestion,
    transcript: Vec<TranscriptLine<'a>>,
    schema_version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
}

/// Strict response body.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Verdict {
    pub side: Stance,
    pub conviction: f64,
    pub reasons: Vec<String>,
}

impl Verdict {
    pub fn parse(body: &str) -> Result<Self, AnalyzerError> {
        let v: Verdict = serde_json::from_str(body)
            .map_err(|e| AnalyzerError::BackendUnavailable(format!("malformed response: {e}")))?;
        if !(0.0..=1.0).contains(&v.conviction) {
            return Err(AnalyzerError::BackendUnavailable(format!(
                "conviction {} outside [0, 1]",
                v.conviction
            )));
        }
        Ok(v)
    }
}

pub struct HttpAnalyzer {
    config: HttpAnalyzerConfig,
    agent: ureq::Agent,
}

impl HttpAnalyzer {
    pub fn new(config: HttpAnalyzerConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(true)
            .build()
            .into();
        HttpAnalyzer { config, agent }
    }

    fn call(&self, window: &[ChatMessage], q: &ForecastQuestion) -> Result<Verdict, AnalyzerError> {
        let transcript = window
            .iter()
            .map(|m| TranscriptLine {
                seq: m.seq,
                author: match &m.author {
                    Author::Participant(p) => p.as_str(),
                    Author::Surrogate(_) => "surrogate",
                },
                text: &m.text,
            })
            .collect();
        let body = serde_json::to_string(&Request {
            question: q,
            transcript,
            schema_version: REQUEST_SCHEMA_VERSION,
            model: self.config.model.as_deref(),
        })
        .expect("request serializes");
        let mut req = self
            .agent
            .post(&self.config.url)
            .header("content-type", "application/json");
        if let Some(key) = &self.config.key {
            req = req.header("authorization", &format!("Bearer {key}"));
        }
        let text = req
            .send(body.as_bytes())
            .and_then(|mut resp| resp.body_mut().read_to_string())
            .map_err(|e| AnalyzerError::BackendUnavailable(e.to_string()))?;
        Verdict::parse(&text)
    }
}

impl DialogAnalyzer for HttpAnalyzer {
    fn assess(
        &mut self,
        participant: &ParticipantId,
        window: &[ChatMessage],
        q: &ForecastQuestion,
    ) -> Result<AssessedStance, AnalyzerError> {
        let start = window.len().saturating_sub(ASSESSMENT_WINDOW);
        let window = &window[start..];
        let v = self.call(window, q)?;
        Ok(AssessedStance {
            participant_id: participant.clone(),
            side: v.side,
            conviction: v.conviction,
            reasons: v.reasons,
            as_of_seq: window.last().map_or(0, |m| m.seq),
        })
    }

    fn extract_insights(
        &mut self,
        subgroup: &SubgroupId,
        window: &[ChatMessage],
        q: &ForecastQuestion,
    ) -> Result<Vec<Insight>, AnalyzerError> {
        let v = self.call(window, q)?;
        let Some(side) = v.side.side() else {
            return Ok(Vec::new());
        };
        Ok(insights_from(
            subgroup,
            window,
            side,
            v.conviction,
            &v.reasons,
        ))
    }
}

/// One insight per non-empty reason, ids anchored at the window's last seq.
pub fn insights_from(
    subgroup: &SubgroupId,
    window: &[ChatMessage],
    side: Side,
    conviction: f64,
    reasons: &[String],
) -> Vec<Insight> {
    let seq = window.last().map_or(0, |m| m.seq);
    let mut seen = Vec::new();
    let mut out = Vec::new();
    for reason in reasons.iter().filter(|r| !r.trim().is_empty()) {
        let insight = Insight::new(
            InsightId(format!("{subgroup}-{seq}-{}", out.len())),
            side,
            vec![reason.clone()],
            conviction,
            subgroup.clone(),
        );
        if seen.contains(&insight.canonical_key) {
            continue;
        }
        seen.push(insight.canonical_key);
        out.push(insight);
    }
    out
}
