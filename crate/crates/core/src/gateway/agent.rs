//! The agent/tool state graph for one chunk.
//!
//! ```text
//! start -> model --(tool call)--> tool --> model --(text)--> end
//! ```

use serde::{Deserialize, Serialize};
use tokio::time::Instant;

use super::limiter::RateGate;
use super::transcript::AgentTranscript;
use super::{ChatProvider, ChatRequest, ProviderConfig, ProviderError, Reply, ToolCall, Turn};
use crate::prompt::{
    estimate_tokens, fixed_tokens, payload_tokens, reply_allowance, ChatMessage,
    PromptBundle, PromptMode, Role,
};

/// Charged for the model's tool-call turn when it is sent back.
pub const TOOL_CALL_TOKENS: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    DeadlineExceeded,
    ProviderError,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub final_text: Option<String>,
    pub error: Option<ProviderError>,
    pub transcript: AgentTranscript,
}

/// Line budget for [`crate::prompt::plan_chunks`] such that a whole
/// tool-calling conversation (two requests) fits inside one window.
pub fn chunk_budget(mode: PromptMode, tpm_budget: u64) -> u64 {
    tpm_budget.saturating_sub(fixed_tokens(mode) + TOOL_CALL_TOKENS)
}

/// Estimate for a request carrying `turns`: every message, the tool
/// description, plus the reply allowance once variant lines are present.
pub fn request_tokens(bundle: &PromptBundle, turns: &[Turn]) -> u64 {
    let mut total = estimate_tokens(&bundle.tool.description);
    let mut line_tokens = 0;
    for t in turns {
        total += match t {
            Turn::System(s) | Turn::Human(s) | Turn::AiText(s) => estimate_tokens(s),
            Turn::AiToolCalls(calls) => calls
                .iter()
                .map(|c| estimate_tokens(&c.arguments).max(TOOL_CALL_TOKENS))
                .sum(),
            Turn::ToolResult { content, .. } => {
                let lines: Vec<&str> = content.lines().collect();
                let lt = payload_tokens(&lines).max(estimate_tokens(""));
                line_tokens += lt;
                lt
            }
        };
    }
    total + reply_allowance(line_tokens)
}

pub async fn run_agent_loop(
    cfg: &ProviderConfig,
    provider: &dyn ChatProvider,
    gate: &RateGate,
    bundle: &PromptBundle,
) -> RunOutcome {
    let mut transcript = AgentTranscript::new();
    let deadline = Instant::now() + cfg.run_deadline;
    let result = tokio::time::timeout_at(
        deadline,
        converse(cfg, provider, gate, bundle, deadline, &mut transcript),
    )
    .await;
    let (status, final_text, error) = match result {
        Err(_) => (RunStatus::DeadlineExceeded, None, None),
        Ok(Ok(text)) => (RunStatus::Completed, Some(text), None),
        Ok(Err(ProviderError::RequestTimeout(_))) if Instant::now() >= deadline => {
            (RunStatus::DeadlineExceeded, None, None)
        }
        Ok(Err(e)) => (RunStatus::ProviderError, None, Some(e)),
    };
    RunOutcome {
        status,
        final_text,
        error,
        transcript,
    }
}

async fn converse(
    cfg: &ProviderConfig,
    provider: &dyn ChatProvider,
    gate: &RateGate,
    bundle: &PromptBundle,
    deadline: Instant,
    transcript: &mut AgentTranscript,
) -> Result<String, ProviderError> {
    let clock = gate.clock().clone();
    let tools = [bundle.tool.clone()];
    let mut turns = vec![
        Turn::System(bundle.system.content.clone()),
        Turn::Human(bundle.human.content.clone()),
    ];
    transcript.push_message(clock.now(), bundle.system.clone());
    transcript.push_message(clock.now(), bundle.human.clone());

    for step in 0..cfg.max_agent_steps {
        let tokens = request_tokens(bundle, &turns);
        let admission = gate.acquire(tokens).await?;
        transcript.push_request(admission.sent_at, step, tokens, admission.waited);

        let request = ChatRequest {
            model: &cfg.model,
            turns: &turns,
            tools: &tools,
        };
        let limit = cfg
            .request_timeout
            .min(deadline.saturating_duration_since(Instant::now()));
        let completion = tokio::time::timeout(limit, provider.complete(&request))
            .await
            .map_err(|_| ProviderError::RequestTimeout(limit))??;
        if let Some(exchange) = completion.exchange {
            transcript.attach_exchange(exchange);
        }

        match completion.reply {
            Reply::Text(text) => {
                transcript.push_message(clock.now(), ChatMessage::new(Role::Ai, text.clone()));
                return Ok(text);
            }
            Reply::ToolCalls(calls) => {
                if calls.is_empty() {
                    return Err(ProviderError::Protocol("empty tool call list".into()));
                }
                if let Some(bad) = calls.iter().find(|c| c.name != bundle.tool.name) {
                    return Err(ProviderError::UnknownTool(bad.name.clone()));
                }
                let payload = bundle.tool_payload();
                turns.push(Turn::AiToolCalls(calls.clone()));
                for ToolCall { id, name, .. } in &calls {
                    transcript.push_tool(clock.now(), id, name, &payload);
                    transcript.push_message(
                        clock.now(),
                        ChatMessage::new(Role::FunctionResult, payload.clone()),
                    );
                    turns.push(Turn::ToolResult {
                        call_id: id.clone(),
                        content: payload.clone(),
                    });
                }
            }
        }
    }
    Err(ProviderError::StepLimit(cfg.max_agent_steps))
}

/// Per-request estimates over a conversation that fetches the tool once.
pub fn conversation_tokens(mode: PromptMode, lines: &[String]) -> u64 {
    let fixed = fixed_tokens(mode);
    let lt = payload_tokens(lines);
    fixed + (fixed + TOOL_CALL_TOKENS + lt + reply_allowance(lt))
}
