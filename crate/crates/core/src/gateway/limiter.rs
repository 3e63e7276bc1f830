//! Sliding-window token pacing.
//!
//! A request of `t` tokens may be sent at time `T` only if the tokens of all
//! requests sent in `(T - window, T]`, plus `t`, stay within the budget. A
//! request sent at `s` therefore stops counting at exactly `s + window`.

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use super::clock::Clock;

pub const DEFAULT_WINDOW: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum PaceError {
    #[error("request of {tokens} tokens can never fit a budget of {budget} tokens per window")]
    Unsatisfiable { tokens: u64, budget: u64 },
}

#[derive(Debug, Clone)]
pub struct SlidingWindowLimiter {
    budget: u64,
    window: Duration,
    sent: VecDeque<(Duration, u64)>,
}

impl SlidingWindowLimiter {
    pub fn new(budget: u64) -> Self {
        Self::with_window(budget, DEFAULT_WINDOW)
    }

    pub fn with_window(budget: u64, window: Duration) -> Self {
        SlidingWindowLimiter {
            budget,
            window,
            sent: VecDeque::new(),
        }
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    /// How long to wait from `now` before `tokens` can be sent.
    pub fn pace(&self, tokens: u64, now: Duration) -> Result<Duration, PaceError> {
        if tokens > self.budget {
            return Err(PaceError::Unsatisfiable {
                tokens,
                budget: self.budget,
            });
        }
        let live: Vec<(Duration, u64)> = self
            .sent
            .iter()
            .copied()
            .filter(|(at, _)| *at + self.window > now)
            .collect();
        let mut in_window: u64 = live.iter().map(|(_, t)| t).sum();
        if in_window + tokens <= self.budget {
            return Ok(Duration::ZERO);
        }
        for (at, t) in live {
            in_window -= t;
            if in_window + tokens <= self.budget {
                return Ok((at + self.window).saturating_sub(now));
            }
        }
        unreachable!("tokens <= budget, so an empty window always fits")
    }

    pub fn record(&mut self, at: Duration, tokens: u64) {
        while let Some((first, _)) = self.sent.front() {
            if *first + self.window <= at {
                self.sent.pop_front();
            } else {
                break;
            }
        }
        self.sent.push_back((at, tokens));
    }
}

/// The single pacing authority for one budget. Callers are serialized: the
/// lock is held across the wait so the window cannot change underneath.
pub struct RateGate {
    limiter: tokio::sync::Mutex<SlidingWindowLimiter>,
    clock: Arc<dyn Clock>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Admission {
    pub sent_at: Duration,
    pub waited: Duration,
}

impl RateGate {
    pub fn new(budget: u64, clock: Arc<dyn Clock>) -> Self {
        RateGate {
            limiter: tokio::sync::Mutex::new(SlidingWindowLimiter::new(budget)),
            clock,
        }
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    /// Waits until `tokens` fit, then records them as sent.
    pub async fn acquire(&self, tokens: u64) -> Result<Admission, PaceError> {
        let mut limiter = self.limiter.lock().await;
        let start = self.clock.now();
        let wait = limiter.pace(tokens, start)?;
        if !wait.is_zero() {
            self.clock.sleep(wait).await;
        }
        let sent_at = self.clock.now().max(start + wait);
        limiter.record(sent_at, tokens);
        Ok(Admission {
            sent_at,
            waited: sent_at - start,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::clock::VirtualClock;

    fn secs(s: u64) -> Duration {
        Duration::from_secs(s)
    }

    #[test]
    fn empty_window_no_wait() {
        let l = SlidingWindowLimiter::new(30_000);
        assert_eq!(l.pace(10_000, secs(0)), Ok(Duration::ZERO));
    }

    #[test]
    fn hand_computed_wait() {
        // 25k sent 10 s ago; 10k more only fits once it leaves the window.
        let mut l = SlidingWindowLimiter::new(30_000);
        l.record(secs(100), 25_000);
        assert_eq!(l.pace(10_000, secs(110)), Ok(secs(50)));
        assert_eq!(l.pace(5_000, secs(110)), Ok(Duration::ZERO));
    }

    #[test]
    fn waits_for_enough_entries_to_expire() {
        let mut l = SlidingWindowLimiter::new(100);
        l.record(secs(0), 40);
        l.record(secs(10), 40);
        l.record(secs(20), 20);
        assert_eq!(l.pace(50, secs(30)), Ok(secs(40)));
        assert_eq!(l.pace(70, secs(30)), Ok(secs(40)));
        assert_eq!(l.pace(90, secs(30)), Ok(secs(50)));
        assert_eq!(l.pace(100, secs(30)), Ok(secs(50)));
    }

    #[test]
    fn oversized_request_is_unsatisfiable() {
        let l = SlidingWindowLimiter::new(10);
        assert_eq!(
            l.pace(11, secs(0)),
            Err(PaceError::Unsatisfiable { tokens: 11, budget: 10 })
        );
    }

    #[tokio::test]
    async fn gate_records_after_wait() {
        let gate = RateGate::new(30_000, Arc::new(VirtualClock::new()));
        let a = gate.acquire(25_000).await.unwrap();
        let b = gate.acquire(10_000).await.unwrap();
        assert!(b.sent_at >= a.sent_at + secs(60));
        assert!(b.waited >= secs(59));
        assert!(gate.acquire(30_001).await.is_err());
    }
}
