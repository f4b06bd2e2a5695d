//! Runtime around `thinktank-core`: session hosting with real or virtual
//! clocks, the HTTP/WebSocket server, JSONL logs, the scripted-participant
//! simulator, and the pick analytics behind the `thinktank` CLI.

pub mod analytics;
pub mod analyzer_http;
pub mod clock;
pub mod host;
pub mod hub;
pub mod logfile;
pub mod server;
pub mod sim;
