//! Scripted dialogue simulation: each JSON line is an utterance plus
//! optional expected directions for risk dimensions.

use std::collections::HashMap;
use std::io::Write;

use advisor_core::risk::{Lexicon, RiskDimension, RiskHeadParams, RiskVector};
use advisor_service::session::{SessionEvent, SessionRecord};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Decrease,
    Increase,
    Unchanged,
    NonIncreasing,
    NonDecreasing,
}

impl Direction {
    fn holds(self, before: f64, after: f64) -> bool {
        match self {
            Self::Decrease => after < before,
            Self::Increase => after > before,
            Self::Unchanged => after == before,
            Self::NonIncreasing => after <= before,
            Self::NonDecreasing => after >= before,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptLine {
    /// Lines sharing a session name continue one conversation; unnamed
    /// lines each start a fresh session.
    #[serde(default)]
    session: Option<String>,
    text: String,
    #[serde(default)]
    expect: HashMap<String, Direction>,
}

#[derive(Debug, Serialize)]
struct OutputLine<'a> {
    line: usize,
    session: &'a str,
    text: &'a str,
    before: RiskVector,
    risk_vector: RiskVector,
    inferred: RiskVector,
    passed: bool,
}

fn dimension(name: &str) -> Option<RiskDimension> {
    RiskDimension::ALL.into_iter().find(|d| d.name() == name)
}

/// Runs the script and writes one JSON line per utterance to `out`.
/// Returns the first failed assertion as `CliError::Assertion`.
pub fn simulate(script: &str, lexicon: &Lexicon, head: &RiskHeadParams, mut out: impl Write) -> Result<(), CliError> {
    let mut parsed = Vec::new();
    for (i, raw) in script.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line: ScriptLine =
            serde_json::from_str(raw).map_err(|e| CliError::Usage(format!("script line {}: {e}", i + 1)))?;
        for name in line.expect.keys() {
            if dimension(name).is_none() {
                return Err(CliError::Usage(format!("script line {}: unknown risk dimension `{name}`", i + 1)));
            }
        }
        parsed.push((i + 1, line));
    }

    let epoch = DateTime::<Utc>::UNIX_EPOCH;
    let mut sessions: HashMap<String, SessionRecord> = HashMap::new();
    let mut failure = None;
    for (lineno, line) in &parsed {
        let name = line.session.clone().unwrap_or_else(|| format!("line-{lineno}"));
        let record = sessions
            .entry(name.clone())
            .or_insert_with(|| SessionRecord::new(name.clone(), epoch));
        let before = record.risk_vector;
        let encoding = lexicon.encode(&line.text);
        record
            .apply(
                &SessionEvent::UserMessage {
                    text: line.text.clone(),
                    encoding: encoding.clone(),
                    timestamp: epoch,
                    degraded: false,
                },
                lexicon,
            )
            .map_err(|e| CliError::Other(e.to_string()))?;
        let after = record.risk_vector;
        let mut passed = true;
        let mut keys: Vec<&String> = line.expect.keys().collect();
        keys.sort();
        for key in keys {
            let dir = line.expect[key];
            let dim = dimension(key).expect("checked above");
            let (b, a) = (before.get(dim), after.get(dim));
            if !dir.holds(b, a) {
                passed = false;
                failure.get_or_insert_with(|| {
                    format!("script line {lineno}: expected {key} to {dir:?}, went {b:.4} -> {a:.4}")
                });
            }
        }
        let row = OutputLine {
            line: *lineno,
            session: &name,
            text: &line.text,
            before,
            risk_vector: after,
            inferred: head.infer(&encoding).map_err(|e| CliError::Other(e.to_string()))?,
            passed,
        };
        serde_json::to_writer(&mut out, &row).map_err(|e| CliError::Other(e.to_string()))?;
        writeln!(out).map_err(|e| CliError::Usage(format!("cannot write output: {e}")))?;
    }
    match failure {
        Some(msg) => Err(CliError::Assertion(msg)),
        None => Ok(()),
    }
}
