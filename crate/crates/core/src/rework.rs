//! Deterministic rework detection.
//!
//! Two notions of repetition are supported:
//!
//! - [`DetectMode::Tandem`]: a unit of one or more activities repeated back
//!   to back ("two repetitions of activity X in a row").
//! - [`DetectMode::Recurrent`]: the same unit appearing at several disjoint
//!   positions, possibly with other activities in between.
//!
//! When several repetitions qualify, the canonical finding is the one with
//! the smallest start, then the shortest unit, then the most repetitions.

use serde::{Deserialize, Serialize};

use crate::eventlog::{Activity, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectMode {
    Tandem,
    Recurrent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectPolicy {
    pub mode: DetectMode,
    pub min_unit_len: usize,
    pub min_repetitions: usize,
}

impl Default for DetectPolicy {
    fn default() -> Self {
        DetectPolicy::tandem(1)
    }
}

impl DetectPolicy {
    pub fn tandem(min_unit_len: usize) -> Self {
        DetectPolicy {
            mode: DetectMode::Tandem,
            min_unit_len,
            min_repetitions: 2,
        }
    }

    pub fn recurrent(min_unit_len: usize) -> Self {
        DetectPolicy {
            mode: DetectMode::Recurrent,
            min_unit_len,
            min_repetitions: 2,
        }
    }

    /// Clamps fields to their valid ranges (`min_unit_len >= 1`, `min_repetitions >= 2`).
    fn normalized(self) -> Self {
        DetectPolicy {
            mode: self.mode,
            min_unit_len: self.min_unit_len.max(1),
            min_repetitions: self.min_repetitions.max(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReworkFinding {
    pub start: usize,
    pub unit: Vec<Activity>,
    pub repetitions: usize,
    pub policy: DetectMode,
}

impl ReworkFinding {
    /// Checks the finding against the variant it claims to describe.
    pub fn verify(&self, v: &Variant) -> bool {
        let acts = v.activities();
        let len = self.unit.len();
        if len == 0 || self.repetitions < 2 {
            return false;
        }
        match self.policy {
            DetectMode::Tandem => {
                let end = self.start + self.repetitions * len;
                end <= acts.len()
                    && acts[self.start..end]
                        .chunks(len)
                        .all(|c| c == self.unit.as_slice())
            }
            DetectMode::Recurrent => {
                acts.get(self.start..self.start + len) == Some(self.unit.as_slice())
                    && count_disjoint(acts, self.start, len) >= self.repetitions
            }
        }
    }
}

pub fn find_rework(v: &Variant, policy: DetectPolicy) -> Option<ReworkFinding> {
    let policy = policy.normalized();
    let acts = v.activities();
    if acts.len() < 2 * policy.min_unit_len {
        return None;
    }
    match policy.mode {
        DetectMode::Tandem => find_tandem(acts, policy),
        DetectMode::Recurrent => find_recurrent(acts, policy),
    }
}

pub fn is_rework(v: &Variant, policy: DetectPolicy) -> bool {
    find_rework(v, policy).is_some()
}

/// For each period `p`, `runs[p][i]` is the number of consecutive positions
/// `j >= i` with `acts[j] == acts[j + p]`. A tandem with unit length `p` at
/// `start` has `1 + runs[p][start] / p` copies.
fn find_tandem(acts: &[Activity], policy: DetectPolicy) -> Option<ReworkFinding> {
    let n = acts.len();
    let max_period = n / 2;
    let mut runs: Vec<Vec<usize>> = vec![Vec::new(); max_period + 1];
    for (p, run) in runs.iter_mut().enumerate().skip(policy.min_unit_len) {
        let mut r = vec![0usize; n - p + 1];
        for i in (0..n - p).rev() {
            if acts[i] == acts[i + p] {
                r[i] = r[i + 1] + 1;
            }
        }
        *run = r;
    }

    for start in 0..n {
        let longest = (n - start) / 2;
        for p in policy.min_unit_len..=longest {
            let copies = 1 + runs[p][start] / p;
            if copies >= policy.min_repetitions {
                return Some(ReworkFinding {
                    start,
                    unit: acts[start..start + p].to_vec(),
                    repetitions: copies,
                    policy: DetectMode::Tandem,
                });
            }
        }
    }
    None
}

/// Greedy leftmost matching maximizes the number of disjoint occurrences.
fn count_disjoint(acts: &[Activity], start: usize, len: usize) -> usize {
    let unit = &acts[start..start + len];
    let mut count = 0;
    let mut i = start;
    while i + len <= acts.len() {
        if &acts[i..i + len] == unit {
            count += 1;
            i += len;
        } else {
            i += 1;
        }
    }
    count
}

fn find_recurrent(acts: &[Activity], policy: DetectPolicy) -> Option<ReworkFinding> {
    let n = acts.len();
    for start in 0..n {
        for len in policy.min_unit_len..=(n - start) / 2 {
            let reps = count_disjoint(acts, start, len);
            if reps >= policy.min_repetitions {
                return Some(ReworkFinding {
                    start,
                    unit: acts[start..start + len].to_vec(),
                    repetitions: reps,
                    policy: DetectMode::Recurrent,
                });
            }
        }
    }
    None
}

/// Renders the repeated region as `Activity X->Activity X`, the shape a
/// correct model answer takes.
///
/// Tandem findings render the contiguous region; recurrent findings render
/// the unit once per occurrence.
pub fn explain_finding(v: &Variant, f: &ReworkFinding) -> String {
    let region: Vec<&str> = match f.policy {
        DetectMode::Tandem => {
            let end = (f.start + f.repetitions * f.unit.len()).min(v.len());
            v.activities()[f.start..end].iter().map(Activity::as_str).collect()
        }
        DetectMode::Recurrent => f
            .unit
            .iter()
            .cycle()
            .take(f.unit.len() * f.repetitions)
            .map(Activity::as_str)
            .collect(),
    };
    region.join("->")
}
