//! Bounded retry with exponential backoff.

use std::fmt;
use std::time::Duration;

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    /// Total attempts including the first one.
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_secs(1),
            max_delay: Duration::from_secs(60),
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_attempts: u32) -> Self {
        RetryPolicy {
            max_attempts,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    /// Delay before attempt `failed + 1`, after `failed` failures (1-based).
    /// A server hint replaces the computed backoff, capped at `max_delay`.
    pub fn delay_after(&self, failed: u32, hint: Option<Duration>) -> Duration {
        let backoff = self
            .base_delay
            .checked_mul(1u32.checked_shl(failed.saturating_sub(1)).unwrap_or(u32::MAX))
            .unwrap_or(self.max_delay);
        hint.unwrap_or(backoff).min(self.max_delay)
    }
}

/// Outcome of one failed attempt.
#[derive(Debug, Clone)]
pub enum Failure {
    Retryable {
        reason: String,
        retry_after: Option<Duration>,
    },
    Fatal(String),
}

impl Failure {
    pub fn retryable(reason: impl Into<String>) -> Self {
        Failure::Retryable {
            reason: reason.into(),
            retry_after: None,
        }
    }

    pub fn reason(&self) -> &str {
        match self {
            Failure::Retryable { reason, .. } => reason,
            Failure::Fatal(reason) => reason,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RetryError {
    pub attempts: u32,
    pub last: String,
}

impl fmt::Display for RetryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} attempt(s))", self.last, self.attempts)
    }
}

impl std::error::Error for RetryError {}

/// Run `op` until it succeeds, fails fatally, or the attempt budget is spent.
/// `op` receives the 1-based attempt number.
pub fn retry<T>(
    policy: &RetryPolicy,
    mut op: impl FnMut(u32) -> Result<T, Failure>,
) -> Result<T, RetryError> {
    let budget = policy.max_attempts.max(1);
    let mut attempt = 1;
    loop {
        match op(attempt) {
            Ok(value) => return Ok(value),
            Err(Failure::Fatal(reason)) => {
                return Err(RetryError {
                    attempts: attempt,
                    last: reason,
                })
            }
            Err(Failure::Retryable {
                reason,
                retry_after,
            }) => {
                if attempt >= budget {
                    return Err(RetryError {
                        attempts: attempt,
                        last: reason,
                    });
                }
                let delay = policy.delay_after(attempt, retry_after);
                log::warn!("attempt {attempt}/{budget} failed: {reason}; retrying in {delay:?}");
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
                attempt += 1;
            }
        }
    }
}
