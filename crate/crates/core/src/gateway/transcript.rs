//! Append-only record of one conversation, serialized as JSON lines.

use std::io::{BufRead, Write};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::agent::RunStatus;
use crate::prompt::{ChatMessage, Role};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedMessage {
    pub at_us: u64,
    pub message: ChatMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInvocation {
    pub at_us: u64,
    pub call_id: String,
    pub name: String,
    pub payload_bytes: usize,
    pub payload_lines: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub at_us: u64,
    pub step: usize,
    pub token_estimate: u64,
    pub waited_us: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exchange: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTranscript {
    pub started_at: DateTime<Utc>,
    pub messages: Vec<TimedMessage>,
    pub tool_invocations: Vec<ToolInvocation>,
    pub requests: Vec<RequestRecord>,
    last_at_us: u64,
}

pub(crate) fn micros(d: Duration) -> u64 {
    d.as_micros().min(u64::MAX as u128) as u64
}

impl AgentTranscript {
    pub fn new() -> Self {
        AgentTranscript {
            started_at: Utc::now(),
            messages: Vec::new(),
            tool_invocations: Vec::new(),
            requests: Vec::new(),
            last_at_us: 0,
        }
    }

    /// Clamps to the last timestamp so the record stays monotone.
    fn stamp(&mut self, at: Duration) -> u64 {
        let us = micros(at).max(self.last_at_us);
        self.last_at_us = us;
        us
    }

    pub fn push_message(&mut self, at: Duration, message: ChatMessage) {
        let at_us = self.stamp(at);
        self.messages.push(TimedMessage { at_us, message });
    }

    pub fn push_tool(&mut self, at: Duration, call_id: &str, name: &str, payload: &str) {
        let at_us = self.stamp(at);
        self.tool_invocations.push(ToolInvocation {
            at_us,
            call_id: call_id.to_string(),
            name: name.to_string(),
            payload_bytes: payload.len(),
            payload_lines: payload.lines().count(),
        });
    }

    pub fn push_request(
        &mut self,
        at: Duration,
        step: usize,
        token_estimate: u64,
        waited: Duration,
    ) {
        let at_us = self.stamp(at);
        self.requests.push(RequestRecord {
            at_us,
            step,
            token_estimate,
            waited_us: micros(waited),
            exchange: None,
        });
    }

    pub fn attach_exchange(&mut self, exchange: serde_json::Value) {
        if let Some(last) = self.requests.last_mut() {
            last.exchange = Some(exchange);
        }
    }

    /// Text of the last model answer, if any.
    pub fn final_answer(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.message.role == Role::Ai)
            .map(|m| m.message.content.as_str())
    }

    pub fn events(&self, chunk: usize) -> Vec<TranscriptEvent> {
        let mut events = vec![TranscriptEvent::Start {
            chunk,
            started_at: self.started_at,
        }];
        events.extend(self.requests.iter().cloned().map(|r| TranscriptEvent::Request { chunk, record: r }));
        events.extend(
            self.tool_invocations
                .iter()
                .cloned()
                .map(|t| TranscriptEvent::Tool { chunk, invocation: t }),
        );
        events.extend(
            self.messages
                .iter()
                .cloned()
                .map(|m| TranscriptEvent::Message { chunk, message: m }),
        );
        events.sort_by_key(|e| e.at_us());
        events
    }
}

impl Default for AgentTranscript {
    fn default() -> Self {
        Self::new()
    }
}

/// One line of `transcript.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TranscriptEvent {
    Start {
        chunk: usize,
        started_at: DateTime<Utc>,
    },
    Request {
        chunk: usize,
        #[serde(flatten)]
        record: RequestRecord,
    },
    Tool {
        chunk: usize,
        #[serde(flatten)]
        invocation: ToolInvocation,
    },
    Message {
        chunk: usize,
        #[serde(flatten)]
        message: TimedMessage,
    },
    Outcome {
        chunk: usize,
        status: RunStatus,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
}

impl TranscriptEvent {
    fn at_us(&self) -> u64 {
        match self {
            TranscriptEvent::Start { .. } => 0,
            TranscriptEvent::Request { record, .. } => record.at_us,
            TranscriptEvent::Tool { invocation, .. } => invocation.at_us,
            TranscriptEvent::Message { message, .. } => message.at_us,
            TranscriptEvent::Outcome { .. } => u64::MAX,
        }
    }
}

pub fn write_events<W: Write>(events: &[TranscriptEvent], mut out: W) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_events<R: BufRead>(input: R) -> std::io::Result<Vec<TranscriptEvent>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(std::io::Error::other)?);
    }
    Ok(out)
}

/// Final answers per chunk, in chunk order, recovered from logged events.
pub fn final_answers(events: &[TranscriptEvent]) -> Vec<String> {
    let mut by_chunk: std::collections::BTreeMap<usize, String> = Default::default();
    for e in events {
        if let TranscriptEvent::Message { chunk, message } = e {
            if message.message.role == Role::Ai {
                by_chunk.insert(*chunk, message.message.content.clone());
            }
        }
    }
    by_chunk.into_values().collect()
}
