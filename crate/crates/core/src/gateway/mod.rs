//! Provider-agnostic chat-completion access.
//!
//! [`run_agent_loop`] drives one conversation per prompt bundle: the model
//! sees the system and human messages plus the variant tool, may call the
//! tool to receive the chunk's formatted variants, and eventually answers in
//! text. Requests are paced through a shared [`RateGate`] and the whole
//! conversation is bounded by a wall-clock deadline.

pub mod agent;
pub mod clock;
pub mod limiter;
pub mod mock;
pub mod openai;
pub mod transcript;

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::ToolSpec;

pub use agent::{run_agent_loop, RunOutcome, RunStatus};
pub use clock::{Clock, SystemClock, VirtualClock};
pub use limiter::{PaceError, RateGate, SlidingWindowLimiter};
pub use mock::{oracle_mock, DelayMock, OracleMock, ScriptedMock};
pub use openai::OpenAiCompatible;
pub use transcript::AgentTranscript;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    OpenaiCompatible,
    MockPerfect,
    MockNoisy,
    MockDelay,
}

impl ProviderKind {
    pub fn is_offline(self) -> bool {
        !matches!(self, ProviderKind::OpenaiCompatible)
    }
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProviderKind::OpenaiCompatible => "openai-compatible",
            ProviderKind::MockPerfect => "mock-perfect",
            ProviderKind::MockNoisy => "mock-noisy",
            ProviderKind::MockDelay => "mock-delay",
        })
    }
}

impl FromStr for ProviderKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "openai-compatible" => Ok(ProviderKind::OpenaiCompatible),
            "mock-perfect" => Ok(ProviderKind::MockPerfect),
            "mock-noisy" => Ok(ProviderKind::MockNoisy),
            "mock-delay" => Ok(ProviderKind::MockDelay),
            other => Err(format!("unknown provider {other:?}")),
        }
    }
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

/// The credential is referenced by environment-variable name only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub tpm_budget: u64,
    #[serde(with = "duration_secs")]
    pub request_timeout: Duration,
    #[serde(with = "duration_secs")]
    pub run_deadline: Duration,
    pub max_agent_steps: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::MockPerfect,
            endpoint: "https://api.openai.com/v1/chat/completions".to_string(),
            model: "gpt-4o-2024-08-06".to_string(),
            api_key_env: "OPENAI_API_KEY".to_string(),
            tpm_budget: 30_000,
            request_timeout: Duration::from_secs(120),
            run_deadline: Duration::from_secs(300),
            max_agent_steps: 4,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.tpm_budget == 0 {
            return Err(ProviderError::Config("tpm_budget must be > 0".into()));
        }
        if self.run_deadline < self.request_timeout {
            return Err(ProviderError::Config(format!(
                "run deadline ({:?}) shorter than request timeout ({:?})",
                self.run_deadline, self.request_timeout
            )));
        }
        if self.max_agent_steps == 0 {
            return Err(ProviderError::Config("max_agent_steps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    pub arguments: String,
}

/// One entry of the conversation as sent to a provider.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Turn {
    System(String),
    Human(String),
    AiText(String),
    AiToolCalls(Vec<ToolCall>),
    ToolResult { call_id: String, content: String },
}

pub struct ChatRequest<'a> {
    pub model: &'a str,
    pub turns: &'a [Turn],
    pub tools: &'a [ToolSpec],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    Text(String),
    ToolCalls(Vec<ToolCall>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub reply: Reply,
    /// Raw request/response bodies for the transcript, when the provider has them.
    pub exchange: Option<serde_json::Value>,
}

impl Completion {
    pub fn new(reply: Reply) -> Self {
        Completion {
            reply,
            exchange: None,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ProviderError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("unexpected response: {0}")]
    Protocol(String),
    #[error("model requested unknown tool {0:?}")]
    UnknownTool(String),
    #[error("no final answer after {0} requests")]
    StepLimit(usize),
    #[error("request timed out after {0:?}")]
    RequestTimeout(Duration),
    #[error(transparent)]
    Pace(#[from] PaceError),
}

#[async_trait]
pub trait ChatProvider: Send + Sync {
    fn name(&self) -> &str;
    async fn complete(&self, request: &ChatRequest<'_>) -> Result<Completion, ProviderError>;
}
