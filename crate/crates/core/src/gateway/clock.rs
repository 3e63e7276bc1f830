use std::sync::Mutex;
use std::time::{Duration, Instant};

use async_trait::async_trait;

/// Monotone time source for pacing and transcript timestamps.
#[async_trait]
pub trait Clock: Send + Sync {
    /// Time elapsed since the clock's origin.
    fn now(&self) -> Duration;
    async fn sleep(&self, d: Duration);
}

pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock {
            origin: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

#[async_trait]
impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    async fn sleep(&self, d: Duration) {
        tokio::time::sleep(d).await;
    }
}

/// Real elapsed time plus every pacing wait, skipped instead of slept.
///
/// Used with offline providers: the transcript still shows a schedule that
/// honors the budget, but nobody waits a minute for a mock.
pub struct VirtualClock {
    origin: Instant,
    skipped: Mutex<Duration>,
}

impl VirtualClock {
    pub fn new() -> Self {
        VirtualClock {
            origin: Instant::now(),
            skipped: Mutex::new(Duration::ZERO),
        }
    }
}

impl Default for VirtualClock {
    fn default() -> Self {
        Self::new()
    }
}

#[async_trait]
impl Clock for VirtualClock {
    fn now(&self) -> Duration {
        self.origin.elapsed() + *self.skipped.lock().expect("clock poisoned")
    }

    async fn sleep(&self, d: Duration) {
        *self.skipped.lock().expect("clock poisoned") += d;
    }
}
