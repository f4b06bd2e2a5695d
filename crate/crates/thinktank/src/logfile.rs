//! JSONL event logs: one record per line, UTF-8, ordered by `seq`.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thinktank_core::session::{Event, EventRecord, SCHEMA_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}:{line}: unsupported schema version {found}")]
    Schema {
        path: PathBuf,
        line: usize,
        found: u32,
    },
    #[error("{path}:{line}: expected seq {expected}, found {found}")]
    OutOfOrder {
        path: PathBuf,
        line: usize,
        expected: u64,
        found: u64,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> LogError + '_ {
    move |source| LogError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Serialize one record as a single line (without the newline).
pub fn to_line(record: &EventRecord) -> String {
    serde_json::to_string(record).expect("event records always serialize")
}

pub fn write_log(path: &Path, records: &[EventRecord]) -> Result<(), LogError> {
    let mut w = LogWriter::create(path)?;
    for r in records {
        w.append(r)?;
    }
    w.flush()
}

pub fn read_log(path: &Path) -> Result<Vec<EventRecord>, LogError> {
    let file = File::open(path).map_err(io_err(path))?;
    parse_lines(path, BufReader::new(file))
}

/// Parse and check a log read from any buffered source.
pub fn parse_lines(path: &Path, reader: impl BufRead) -> Result<Vec<EventRecord>, LogError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let version: serde_json::Value =
            serde_json::from_str(&line).map_err(|source| LogError::Parse {
                path: path.to_path_buf(),
                line: lineno,
                source,
            })?;
        let found = version["schema_version"].as_u64().unwrap_or(0) as u32;
        if found != SCHEMA_VERSION {
            return Err(LogError::Schema {
                path: path.to_path_buf(),
                line: lineno,
                found,
            });
        }
        let record: EventRecord =
            serde_json::from_str(&line).map_err(|source| LogError::Parse {
                path: path.to_path_buf(),
                line: lineno,
                source,
            })?;
        let expected = out.len() as u64;
        if record.seq != expected {
            return Err(LogError::OutOfOrder {
                path: path.to_path_buf(),
                line: lineno,
                expected,
                found: record.seq,
            });
        }
        out.push(record);
    }
    Ok(out)
}

/// Every `*.jsonl` file in `dir`, sorted by file name.
pub fn read_dir(dir: &Path) -> Result<Vec<(PathBuf, Vec<EventRecord>)>, LogError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| read_log(&p).map(|log| (p, log)))
        .collect()
}

/// The session id recorded in a log's header.
pub fn session_id(log: &[EventRecord]) -> Option<&str> {
    match log.first().map(|r| &r.event) {
        Some(Event::SessionCreated { session_id, .. }) => Some(session_id),
        _ => None,
    }
}

/// Appends records to a log file as they are produced.
pub struct LogWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl LogWriter {
    pub fn create(path: &Path) -> Result<Self, LogError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let file = File::create(path).map_err(io_err(path))?;
        Ok(LogWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &EventRecord) -> Result<(), LogError> {
        let line = to_line(record);
        self.out
            .write_all(line.as_bytes())
            .and_then(|()| self.out.write_all(b"\n"))
            .map_err(io_err(&self.path))
    }

    pub fn flush(&mut self) -> Result<(), LogError> {
        self.out.flush().map_err(io_err(&self.path))
    }
}
