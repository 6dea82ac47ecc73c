//! Raw event records and the newline-delimited log format.
//!
//! One JSON object per line, discriminated by a `"type"` field
//! (`"exposure"` or `"metric"`).

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::DataError;

/// Fired when experiment assignment evaluation code is called for a user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureEvent {
    pub user_id: String,
    pub experiment_id: String,
    pub variant: String,
    /// Experiment-relative day index, 1-based.
    pub day: u32,
    /// Code-call site (service name) that evaluated the assignment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service_tag: Option<String>,
}

/// A per-user, per-day metric contribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEvent {
    pub user_id: String,
    pub day: u32,
    pub metric_id: String,
    pub value: f64,
    /// Origin of the tracking event (e.g. a page identifier), independent of
    /// assignment-evaluation code.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Exposure(ExposureEvent),
    Metric(MetricEvent),
}

impl Event {
    pub fn user_id(&self) -> &str {
        match self {
            Event::Exposure(e) => &e.user_id,
            Event::Metric(m) => &m.user_id,
        }
    }

    pub fn day(&self) -> u32 {
        match self {
            Event::Exposure(e) => e.day,
            Event::Metric(m) => m.day,
        }
    }
}

/// Parses one NDJSON line; `line_no` is 1-based and used for error reporting.
pub fn parse_event_line(line: &str, line_no: usize) -> Result<Event, DataError> {
    serde_json::from_str(line).map_err(|e| DataError::MalformedLine {
        line: line_no,
        message: e.to_string(),
    })
}

/// Reads an entire event log, skipping blank lines.
pub fn read_events<R: BufRead>(reader: R) -> Result<Vec<Event>, DataError> {
    let mut events = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(parse_event_line(&line, idx + 1)?);
    }
    Ok(events)
}

/// Writes events in the NDJSON format, one object per line.
pub fn write_events<W: Write>(mut writer: W, events: &[Event]) -> Result<(), DataError> {
    for event in events {
        let line = serde_json::to_string(event).expect("event serialization is infallible");
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
