//! Reading logs and outcomes, and rendering pick reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thinktank_core::domain::{QuestionId, Side};
use thinktank_core::replay::LogProjection;
use thinktank_core::scoring::{
    cohort_report, picks_from_log, rate_cutoff, score_picks, Covering, GameOutcome, PickRecord,
    ReportRow, ScoringError, DEFAULT_STAKE,
};
use thinktank_core::session::EventRecord;

use crate::logfile::{self, LogError};

#[derive(Debug, thiserror::Error)]
pub enum AnalyticsError {
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: row {row}: {message}")]
    BadOutcome {
        path: PathBuf,
        row: usize,
        message: String,
    },
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("quantile {0} outside [0, 1]")]
    Quantile(f64),
}

#[derive(Debug, Deserialize)]
struct OutcomeRow {
    question_id: String,
    covering_side: String,
    favorite_side: String,
}

fn parse_side(s: &str) -> Option<Option<Side>> {
    match s.trim().to_ascii_lowercase().as_str() {
        "a" => Some(Some(Side::A)),
        "b" => Some(Some(Side::B)),
        "none" | "" => Some(None),
        _ => None,
    }
}

/// Outcomes CSV with columns `question_id, covering_side, favorite_side`.
pub fn read_outcomes(path: &Path) -> Result<BTreeMap<QuestionId, GameOutcome>, AnalyticsError> {
    let csv_err = |source| AnalyticsError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let mut out = BTreeMap::new();
    for (i, row) in reader.deserialize::<OutcomeRow>().enumerate() {
        let row = row.map_err(csv_err)?;
        let bad = |message: String| AnalyticsError::BadOutcome {
            path: path.to_path_buf(),
            row: i + 1,
            message,
        };
        let covering = match row.covering_side.to_ascii_lowercase().as_str() {
            "a" => Covering::A,
            "b" => Covering::B,
            "push" => Covering::Push,
            other => return Err(bad(format!("covering_side {other:?}"))),
        };
        let favorite = parse_side(&row.favorite_side)
            .ok_or_else(|| bad(format!("favorite_side {:?}", row.favorite_side)))?;
        let id = QuestionId(row.question_id);
        if out.contains_key(&id) {
            return Err(bad(format!("duplicate question {id}")));
        }
        out.insert(
            id.clone(),
            GameOutcome {
                question_id: id,
                covering,
                favorite,
            },
        );
    }
    Ok(out)
}

/// Pick records from every log in `dir`.
pub fn picks_in_dir(dir: &Path) -> Result<Vec<PickRecord>, AnalyticsError> {
    let mut picks = Vec::new();
    for (path, log) in logfile::read_dir(dir)? {
        let fallback = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        let id = logfile::session_id(&log)
            .map(str::to_string)
            .or(fallback)
            .unwrap_or_default();
        picks.extend(picks_from_log(&id, &log));
    }
    Ok(picks)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub rounds: usize,
    pub tossups: usize,
    pub scored: usize,
    pub quantile: f64,
    pub rate_cutoff: Option<f64>,
    pub rows: Vec<ReportRow>,
}

pub fn analyze(
    picks: &[PickRecord],
    outcomes: &BTreeMap<QuestionId, GameOutcome>,
    quantile: f64,
) -> Result<Report, AnalyticsError> {
    if !(0.0..=1.0).contains(&quantile) {
        return Err(AnalyticsError::Quantile(quantile));
    }
    let scored = score_picks(picks, outcomes)?;
    Ok(Report {
        rounds: picks.len(),
        tossups: picks.iter().filter(|p| p.pick.side().is_none()).count(),
        scored: scored.len(),
        quantile,
        rate_cutoff: rate_cutoff(&scored, quantile),
        rows: cohort_report(&scored, quantile, DEFAULT_STAKE),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Table,
    Csv,
    Json,
}

fn signed(x: f64) -> String {
    let r = thinktank_core::stats::round_tenth(x);
    if r > 0.0 {
        format!("+{r:.1}%")
    } else if r == 0.0 {
        "0.0%".into()
    } else {
        format!("{r:.1}%")
    }
}

pub fn render(report: &Report, format: Format) -> String {
    match format {
        Format::Json => serde_json::to_string_pretty(report).expect("report serializes") + "\n",
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([
                "label", "n_games", "wins", "losses", "accuracy", "roi", "profit", "p_value",
            ])
            .expect("in-memory write");
            for r in &report.rows {
                w.write_record([
                    r.label.clone(),
                    r.picks.to_string(),
                    r.wins.to_string(),
                    r.losses.to_string(),
                    format!("{:.1}", r.accuracy),
                    format!("{:.1}", thinktank_core::stats::round_tenth(r.roi)),
                    format!("{:.2}", r.profit),
                    format!("{:.3}", r.p_value),
                ])
                .expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
        }
        Format::Table => {
            let mut s = String::new();
            let _ = writeln!(
                s,
                "{:<16} {:>7} {:>14} {:>8} {:>9}",
                "Picks", "Games", "Record (Acc.)", "ROI", "p-value"
            );
            for r in &report.rows {
                let record = format!("{}-{} ({:.1}%)", r.wins, r.losses, r.accuracy);
                let _ = writeln!(
                    s,
                    "{:<16} {:>7} {:>14} {:>8} {:>9.3}",
                    r.label,
                    r.picks,
                    record,
                    signed(r.roi),
                    r.p_value
                );
            }
            let cutoff = report
                .rate_cutoff
                .map_or("n/a".to_string(), |c| format!("{c:.1}"));
            let _ = writeln!(
                s,
                "\n{} rounds, {} toss-ups, {} scored; rate cutoff at quantile {}: {} chars/min/participant",
                report.rounds, report.tossups, report.scored, report.quantile, cutoff
            );
            s
        }
    }
}

/// Sentiment series of every round as CSV: `session_id,round,question_id,elapsed_ms,mean`.
pub fn series_csv(log: &[EventRecord]) -> String {
    let proj = LogProjection::from_log(log);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["session_id", "round", "question_id", "elapsed_ms", "mean"])
        .expect("in-memory write");
    for (round, r) in &proj.rounds {
        let qid = r
            .question
            .as_ref()
            .map_or(String::new(), |q| q.id.to_string());
        for (t, m) in r.series.points() {
            w.write_record([
                proj.session_id.clone(),
                round.to_string(),
                qid.clone(),
                t.to_string(),
                m.to_string(),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use thinktank_core::forecast::Pick;

    fn outcomes_file(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_outcomes() {
        let f = outcomes_file("question_id,covering_side,favorite_side\nq1,A,B\nq2, push ,none\n");
        let o = read_outcomes(f.path()).unwrap();
        assert_eq!(o[&QuestionId::from("q1")].covering, Covering::A);
        assert_eq!(o[&QuestionId::from("q1")].favorite, Some(Side::B));
        assert_eq!(o[&QuestionId::from("q2")].covering, Covering::Push);
        assert_eq!(o[&QuestionId::from("q2")].favorite, None);
    }

    #[test]
    fn rejects_bad_outcomes() {
        let f = outcomes_file("question_id,covering_side,favorite_side\nq1,C,A\n");
        assert!(matches!(
            read_outcomes(f.path()),
            Err(AnalyticsError::BadOutcome { .. })
        ));
        let f = outcomes_file("question_id,covering_side,favorite_side\nq1,A,A\nq1,B,A\n");
        assert!(matches!(
            read_outcomes(f.path()),
            Err(AnalyticsError::BadOutcome { .. })
        ));
    }

    #[test]
    fn renders_all_formats() {
        let picks: Vec<PickRecord> = (0..4)
            .map(|i| PickRecord {
                session_id: "s".into(),
                round: i,
                question_id: format!("q{i}").into(),
                pick: if i == 3 { Pick::None } else { Pick::A },
                risk_points: None,
                wcf: -1.0,
                spread_favorite: Some(Side::A),
                conversation_rate: i as f64,
            })
            .collect();
        let outcomes = (0..4)
            .map(|i| {
                let id = QuestionId(format!("q{i}"));
                let covering = if i == 0 { Covering::B } else { Covering::A };
                (
                    id.clone(),
                    GameOutcome {
                        question_id: id,
                        covering,
                        favorite: None,
                    },
                )
            })
            .collect();
        let report = analyze(&picks, &outcomes, 0.25).unwrap();
        assert_eq!((report.rounds, report.tossups, report.scored), (4, 1, 3));
        let table = render(&report, Format::Table);
        assert!(table.contains("All Picks"));
        assert!(table.contains("2-1 (66.7%)"));
        let csv = render(&report, Format::Csv);
        assert_eq!(csv.lines().count(), 6);
        let json: serde_json::Value = serde_json::from_str(&render(&report, Format::Json)).unwrap();
        assert_eq!(json["rows"][0]["wins"], 2);
        assert!(analyze(&picks, &outcomes, 1.5).is_err());
    }

    #[test]
    fn signed_percent() {
        assert_eq!(signed(18.36), "+18.4%");
        assert_eq!(signed(-20.45), "-20.5%");
        assert_eq!(signed(0.0), "0.0%");
    }
}
