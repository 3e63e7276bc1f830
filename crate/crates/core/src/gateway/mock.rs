//! Offline providers for tests and dry runs.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;

use super::{ChatProvider, ChatRequest, Completion, ProviderError, Reply, ToolCall, Turn};
use crate::eventlog::{parse_variant_line, Label, LabeledDataset, Variant, ARROW};
use crate::prompt::TOOL_NAME;
use crate::rework::{explain_finding, find_rework, DetectPolicy};
use crate::rng::{derive_seed, SeededRng};

fn tool_call() -> Reply {
    Reply::ToolCalls(vec![ToolCall {
        id: "call_0".to_string(),
        name: TOOL_NAME.to_string(),
        arguments: "{}".to_string(),
    }])
}

/// Knows the true labels. Fetches the chunk through the tool, then answers
/// with one `id# sequence` line per variant it flags.
///
/// Each variant's decision comes from its own stream of the seed, so the
/// answer for a variant does not depend on how the dataset was chunked.
pub struct OracleMock {
    truth: HashMap<u64, (Label, Variant)>,
    fp_rate: f64,
    fn_rate: f64,
    seed: u64,
    policy: DetectPolicy,
}

pub fn oracle_mock(labels: &LabeledDataset, fp_rate: f64, fn_rate: f64, seed: u64) -> OracleMock {
    let truth = labels
        .items()
        .iter()
        .map(|lv| (lv.id, (lv.label, lv.variant.clone())))
        .collect();
    OracleMock {
        truth,
        fp_rate: fp_rate.clamp(0.0, 1.0),
        fn_rate: fn_rate.clamp(0.0, 1.0),
        seed,
        policy: DetectPolicy::default(),
    }
}

impl OracleMock {
    pub fn with_policy(mut self, policy: DetectPolicy) -> Self {
        self.policy = policy;
        self
    }

    fn answer_line(&self, id: u64) -> Option<String> {
        let (label, variant) = self.truth.get(&id)?;
        let mut rng = SeededRng::new(derive_seed(self.seed, id));
        let flagged = match label {
            Label::Rework => !rng.bernoulli(self.fn_rate),
            Label::Normal => rng.bernoulli(self.fp_rate),
        };
        if !flagged {
            return None;
        }
        let claim = match find_rework(variant, self.policy) {
            Some(f) => explain_finding(variant, &f),
            None => variant.join(ARROW),
        };
        Some(format!("{id}# {claim}"))
    }

    fn answer(&self, payload: &str) -> String {
        let lines: Vec<String> = payload
            .lines()
            .filter_map(|l| parse_variant_line(l).ok())
            .filter_map(|(id, _)| self.answer_line(id))
            .collect();
        if lines.is_empty() {
            "No rework anomalies found.".to_string()
        } else {
            lines.join("\n")
        }
    }
}

#[async_trait]
impl ChatProvider for OracleMock {
    fn name(&self) -> &str {
        "oracle-mock"
    }

    async fn complete(&self, request: &ChatRequest<'_>) -> Result<Completion, ProviderError> {
        let payload = request.turns.iter().rev().find_map(|t| match t {
            Turn::ToolResult { content, .. } => Some(content.as_str()),
            _ => None,
        });
        Ok(Completion::new(match payload {
            None => tool_call(),
            Some(p) => Reply::Text(self.answer(p)),
        }))
    }
}

/// Sleeps before every reply, then defers to the wrapped provider.
pub struct DelayMock<P> {
    pub delay: Duration,
    pub inner: P,
}

#[async_trait]
impl<P: ChatProvider> ChatProvider for DelayMock<P> {
    fn name(&self) -> &str {
        "delay-mock"
    }

    async fn complete(&self, request: &ChatRequest<'_>) -> Result<Completion, ProviderError> {
        tokio::time::sleep(self.delay).await;
        self.inner.complete(request).await
    }
}

/// Plays back a fixed list of replies; errors once the script runs out.
pub struct ScriptedMock {
    script: Mutex<std::collections::VecDeque<Result<Reply, ProviderError>>>,
}

impl ScriptedMock {
    pub fn new(script: Vec<Result<Reply, ProviderError>>) -> Self {
        ScriptedMock {
            script: Mutex::new(script.into()),
        }
    }

    pub fn tool_then(answer: &str) -> Self {
        Self::new(vec![Ok(tool_call()), Ok(Reply::Text(answer.to_string()))])
    }
}

#[async_trait]
impl ChatProvider for ScriptedMock {
    fn name(&self) -> &str {
        "scripted-mock"
    }

    async fn complete(&self, _request: &ChatRequest<'_>) -> Result<Completion, ProviderError> {
        let next = self.script.lock().expect("script poisoned").pop_front();
        next.unwrap_or_else(|| Err(ProviderError::Protocol("script exhausted".into())))
            .map(Completion::new)
    }
}
