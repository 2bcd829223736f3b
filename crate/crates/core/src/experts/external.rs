//! Client for an out-of-process quality scorer.
//!
//! The protocol is one JSON object per line over TCP. The client connects,
//! writes
//!
//! ```text
//! {"candidate":[0.1,-0.4,...],"category":"top","rubric":"..."}\n
//! ```
//!
//! and reads back a single line `{"level":7}` with `level` in `1..=10`.
//! Each request uses a fresh connection.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variable that overrides the configured endpoint.
pub const ENDPOINT_ENV: &str = "OUTFIT_DPO_SCORER";

pub const DEFAULT_RUBRIC: &str = "Judge whether this fashion item is complete and follows sound \
fashion design. Answer with a single quality level from 1 to 10, where 1 means very poor, \
5 moderate, 7 good, 9 high and 10 exceptional quality.";

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ScoreRequest {
    pub candidate: Vec<f64>,
    pub category: String,
    pub rubric: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ScoreResponse {
    pub level: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalScorer {
    pub endpoint: String,
    pub timeout: Duration,
    pub rubric: String,
}

impl ExternalScorer {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout,
            rubric: DEFAULT_RUBRIC.to_string(),
        }
    }

    /// Endpoint from the environment if set, else `configured`.
    pub fn resolve(configured: Option<&str>, timeout: Duration) -> Option<Self> {
        std::env::var(ENDPOINT_ENV)
            .ok()
            .filter(|s| !s.is_empty())
            .or_else(|| configured.map(str::to_string))
            .map(|e| Self::new(e, timeout))
    }

    pub fn level(&self, candidate: &[f64], category: &str) -> Result<u8> {
        let scorer_err = |msg: String| Error::Scorer(format!("{}: {msg}", self.endpoint));
        let addr = self
            .endpoint
            .to_socket_addrs()
            .map_err(|e| scorer_err(e.to_string()))?
            .next()
            .ok_or_else(|| scorer_err("endpoint did not resolve".into()))?;
        let mut stream =
            TcpStream::connect_timeout(&addr, self.timeout).map_err(|e| scorer_err(e.to_string()))?;
        stream
            .set_read_timeout(Some(self.timeout))
            .and_then(|_| stream.set_write_timeout(Some(self.timeout)))
            .map_err(|e| scorer_err(e.to_string()))?;
        let req = ScoreRequest {
            candidate: candidate.to_vec(),
            category: category.to_string(),
            rubric: self.rubric.clone(),
        };
        let mut line = serde_json::to_string(&req)?;
        line.push('\n');
        stream
            .write_all(line.as_bytes())
            .map_err(|e| scorer_err(e.to_string()))?;
        let mut reply = String::new();
        BufReader::new(stream)
            .read_line(&mut reply)
            .map_err(|e| scorer_err(e.to_string()))?;
        let resp: ScoreResponse = serde_json::from_str(reply.trim())
            .map_err(|e| scorer_err(format!("protocol violation: {e}")))?;
        if !(1..=10).contains(&resp.level) {
            return Err(scorer_err(format!("level {} outside 1..=10", resp.level)));
        }
        Ok(resp.level as u8)
    }
}
