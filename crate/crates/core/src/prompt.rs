//! Prompt bundles for zero-, one- and few-shot detection requests, and the
//! token accounting used to split a dataset into requests that fit a
//! tokens-per-minute budget.
//!
//! Prompt texts live in `prompts/*.txt` and are compiled in verbatim.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eventlog::{format_variant, LabeledDataset};

pub const SYSTEM_PROMPT: &str = include_str!("../prompts/system.txt");
pub const FUNCTION_DESCRIPTION: &str = include_str!("../prompts/function.txt");
pub const ZERO_SHOT_PROMPT: &str = include_str!("../prompts/zero.txt");
pub const ONE_SHOT_PROMPT: &str = include_str!("../prompts/one.txt");
pub const FEW_SHOT_PROMPT: &str = include_str!("../prompts/few.txt");

pub const TOOL_NAME: &str = "get_event_variants";

/// Fixed overhead charged per message by [`estimate_tokens`].
pub const MESSAGE_OVERHEAD_TOKENS: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    System,
    Human,
    Ai,
    FunctionResult,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: content.into(),
        }
    }
}

/// The single tool offered to the model. It takes no arguments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub parameters: serde_json::Value,
}

impl Default for ToolSpec {
    fn default() -> Self {
        ToolSpec {
            name: TOOL_NAME.to_string(),
            description: FUNCTION_DESCRIPTION.to_string(),
            parameters: serde_json::json!({ "type": "object", "properties": {} }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    Zero,
    One,
    Few,
}

impl PromptMode {
    pub const ALL: [PromptMode; 3] = [PromptMode::Zero, PromptMode::One, PromptMode::Few];

    pub fn human_text(self) -> &'static str {
        match self {
            PromptMode::Zero => ZERO_SHOT_PROMPT,
            PromptMode::One => ONE_SHOT_PROMPT,
            PromptMode::Few => FEW_SHOT_PROMPT,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PromptMode::Zero => "zero",
            PromptMode::One => "one",
            PromptMode::Few => "few",
        }
    }

    pub fn worked_examples(self) -> usize {
        match self {
            PromptMode::Zero => 0,
            PromptMode::One => 1,
            PromptMode::Few => 3,
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptMode::Zero => "zero-shot",
            PromptMode::One => "one-shot",
            PromptMode::Few => "few-shot",
        })
    }
}

impl FromStr for PromptMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero" | "zero-shot" => Ok(PromptMode::Zero),
            "one" | "one-shot" => Ok(PromptMode::One),
            "few" | "few-shot" => Ok(PromptMode::Few),
            other => Err(format!("unknown prompt mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub mode: PromptMode,
    pub system: ChatMessage,
    pub human: ChatMessage,
    pub tool: ToolSpec,
    pub chunk: Vec<String>,
}

impl PromptBundle {
    /// The tool's output: one formatted variant per line.
    pub fn tool_payload(&self) -> String {
        self.chunk.join("\n")
    }
}

pub fn build_bundle(mode: PromptMode, chunk: Vec<String>) -> PromptBundle {
    PromptBundle {
        mode,
        system: ChatMessage::new(Role::System, SYSTEM_PROMPT),
        human: ChatMessage::new(Role::Human, mode.human_text()),
        tool: ToolSpec::default(),
        chunk,
    }
}

/// Rough token count: `ceil(bytes / 4) + 8`. An estimate, not a tokenizer.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4) + MESSAGE_OVERHEAD_TOKENS
}

/// Tokens charged for a tool payload: each variant line is priced like its
/// own message, which keeps the estimate on the conservative side for the
/// many short id/arrow tokens in a variant line.
pub fn payload_tokens<S: AsRef<str>>(lines: &[S]) -> u64 {
    lines.iter().map(|l| estimate_tokens(l.as_ref())).sum()
}

pub fn message_tokens(msg: &ChatMessage) -> u64 {
    match msg.role {
        Role::FunctionResult => {
            let lines: Vec<&str> = msg.content.lines().collect();
            if lines.is_empty() {
                estimate_tokens("")
            } else {
                payload_tokens(&lines)
            }
        }
        _ => estimate_tokens(&msg.content),
    }
}

/// System + human + tool description for a mode.
pub fn fixed_tokens(mode: PromptMode) -> u64 {
    estimate_tokens(SYSTEM_PROMPT) + estimate_tokens(mode.human_text()) + estimate_tokens(FUNCTION_DESCRIPTION)
}

/// Reply allowance: 25% of the line tokens, rounded up.
pub fn reply_allowance(line_tokens: u64) -> u64 {
    line_tokens.div_ceil(4)
}

/// Total a single chunk with these lines is charged against the budget.
pub fn chunk_tokens<S: AsRef<str>>(mode: PromptMode, lines: &[S]) -> u64 {
    let lt = payload_tokens(lines);
    fixed_tokens(mode) + lt + reply_allowance(lt)
}

/// Estimate for sending the whole dataset as one chunk.
pub fn dataset_tokens(ds: &LabeledDataset, mode: PromptMode) -> u64 {
    let lines: Vec<String> = ds.items().iter().map(format_variant).collect();
    chunk_tokens(mode, &lines)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChunkError {
    #[error("variant {id} needs {needed} tokens, over the budget of {budget}")]
    LineTooLarge { id: u64, needed: u64, budget: u64 },
}

/// A planned request: formatted lines plus the ids they carry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub ids: Vec<u64>,
    pub lines: Vec<String>,
}

/// Greedy packing in dataset order so that every chunk's
/// [`chunk_tokens`] stays within `budget_tokens`.
pub fn plan_chunks(
    ds: &LabeledDataset,
    mode: PromptMode,
    budget_tokens: u64,
) -> Result<Vec<Chunk>, ChunkError> {
    let fixed = fixed_tokens(mode);
    let mut chunks = Vec::new();
    let mut current = Chunk {
        ids: Vec::new(),
        lines: Vec::new(),
    };
    let mut current_line_tokens = 0u64;
    for lv in ds.items() {
        let line = format_variant(lv);
        let t = estimate_tokens(&line);
        let alone = fixed + t + reply_allowance(t);
        if alone > budget_tokens {
            return Err(ChunkError::LineTooLarge {
                id: lv.id,
                needed: alone,
                budget: budget_tokens,
            });
        }
        let grown = current_line_tokens + t;
        if !current.lines.is_empty() && fixed + grown + reply_allowance(grown) > budget_tokens {
            chunks.push(std::mem::replace(
                &mut current,
                Chunk {
                    ids: Vec::new(),
                    lines: Vec::new(),
                },
            ));
            current_line_tokens = 0;
        }
        current.ids.push(lv.id);
        current.lines.push(line);
        current_line_tokens += t;
    }
    if !current.lines.is_empty() {
        chunks.push(current);
    }
    Ok(chunks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eventlog::{Label, LabeledVariant, Variant};

    fn dataset(n: usize) -> LabeledDataset {
        let items = (0..n)
            .map(|i| {
                LabeledVariant::new(
                    i as u64 + 1,
                    Variant::from_names(&["Activity A", "Activity B", "Activity C"]).unwrap(),
                    Label::Normal,
                )
            })
            .collect();
        LabeledDataset::new(items, "t").unwrap()
    }

    #[test]
    fn estimate_examples() {
        assert_eq!(estimate_tokens(""), 8);
        assert_eq!(estimate_tokens(&"x".repeat(400)), 108);
        assert_eq!(estimate_tokens("abcde"), 10);
    }

    #[test]
    fn modes_differ_only_in_human_text() {
        let chunk = vec!["1# Activity A".to_string()];
        let bundles: Vec<_> = PromptMode::ALL.iter().map(|m| build_bundle(*m, chunk.clone())).collect();
        for b in &bundles {
            assert_eq!(b.system, bundles[0].system);
            assert_eq!(b.tool, bundles[0].tool);
            assert_eq!(b.tool.name, "get_event_variants");
        }
        assert_ne!(bundles[0].human, bundles[1].human);
        assert_ne!(bundles[1].human, bundles[2].human);
        assert_eq!(build_bundle(PromptMode::One, chunk.clone()), bundles[1]);
    }

    #[test]
    fn example_counts() {
        assert!(!ZERO_SHOT_PROMPT.contains("example of"));
        assert!(ONE_SHOT_PROMPT.contains("Because it has two repetitions of activity X in a row."));
        assert!(FEW_SHOT_PROMPT.contains("1) ") && FEW_SHOT_PROMPT.contains("2) "));
        assert!(FEW_SHOT_PROMPT.contains("3) "));
        assert!(FEW_SHOT_PROMPT.contains("three repetitions of Activity C -> Activity R"));
        assert_eq!(PromptMode::Few.worked_examples(), 3);
    }

    #[test]
    fn every_mode_shares_task_and_footer() {
        let footer = "The output should be in this format:\nVariant Id# Which sequence of activities is reworked?\nExample:1# A->A->B->B->A";
        for mode in PromptMode::ALL {
            let text = mode.human_text();
            assert!(text.starts_with("Detect the variants with the rework anomalies.\n"));
            assert!(text.ends_with(footer));
        }
    }

    #[test]
    fn tiny_dataset_is_one_chunk() {
        let ds = dataset(5);
        let chunks = plan_chunks(&ds, PromptMode::Few, 30_000).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].ids, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn tight_budget_splits_and_preserves_order() {
        let ds = dataset(50);
        let budget = fixed_tokens(PromptMode::Zero) + 100;
        let chunks = plan_chunks(&ds, PromptMode::Zero, budget).unwrap();
        assert!(chunks.len() >= 2);
        let ids: Vec<u64> = chunks.iter().flat_map(|c| c.ids.clone()).collect();
        assert_eq!(ids, (1..=50).collect::<Vec<_>>());
        for c in &chunks {
            assert!(chunk_tokens(PromptMode::Zero, &c.lines) <= budget);
        }
    }

    #[test]
    fn oversized_line_names_variant() {
        let ds = dataset(3);
        let budget = fixed_tokens(PromptMode::Few) + 5;
        assert_eq!(
            plan_chunks(&ds, PromptMode::Few, budget),
            Err(ChunkError::LineTooLarge {
                id: 1,
                needed: fixed_tokens(PromptMode::Few) + 19 + 5,
                budget
            })
        );
    }

    #[test]
    fn function_result_priced_per_line() {
        let msg = ChatMessage::new(Role::FunctionResult, "1# A\n2# B");
        assert_eq!(message_tokens(&msg), 2 * estimate_tokens("1# A"));
        let msg = ChatMessage::new(Role::Human, "1# A\n2# B");
        assert_eq!(message_tokens(&msg), estimate_tokens("1# A\n2# B"));
    }
}
