//! Shared plumbing for external generation services: error type, retry
//! policy and a blocking HTTP agent.

use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    /// Network failure or timeout. Retried.
    #[error("transport: {0}")]
    Transport(String),
    /// Non-success HTTP status. 429 and 5xx are retried.
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    /// The service answered but the answer is unusable. Not retried.
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("provider not configured: {0}")]
    NotConfigured(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        match self {
            ProviderError::Transport(_) => true,
            ProviderError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Exponential backoff: attempt `i` (0-based) waits `initial * 2^i` before
/// the next try.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn no_wait(attempts: u32) -> Self {
        Self {
            attempts,
            initial_backoff: Duration::ZERO,
        }
    }

    pub fn backoff(&self, attempt: u32) -> Duration {
        self.initial_backoff.saturating_mul(1u32 << attempt.min(16))
    }

    /// Runs `op` until it succeeds, fails with a non-retryable error, or the
    /// attempt budget is spent. Returns the last error.
    pub fn run<T>(&self, mut op: impl FnMut(u32) -> Result<T, ProviderError>) -> Result<T, ProviderError> {
        let attempts = self.attempts.max(1);
        let mut attempt = 0;
        loop {
            match op(attempt) {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt + 1 < attempts => {
                    log::debug!("attempt {} failed: {e}; retrying", attempt + 1);
                    std::thread::sleep(self.backoff(attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

pub(crate) fn http_agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

pub(crate) fn transport(e: ureq::Error) -> ProviderError {
    match e {
        ureq::Error::StatusCode(status) => ProviderError::Status {
            status,
            body: String::new(),
        },
        other => ProviderError::Transport(other.to_string()),
    }
}

/// Turns a non-2xx response into [`ProviderError::Status`].
pub(crate) fn check_status(resp: &mut ureq::http::Response<ureq::Body>) -> Result<(), ProviderError> {
    let status = resp.status().as_u16();
    if (200..300).contains(&status) {
        return Ok(());
    }
    let body = resp
        .body_mut()
        .read_to_string()
        .unwrap_or_default()
        .chars()
        .take(200)
        .collect();
    Err(ProviderError::Status { status, body })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn retries_only_retryable_errors() {
        let calls = Cell::new(0);
        let r: Result<(), _> = RetryPolicy::no_wait(3).run(|_| {
            calls.set(calls.get() + 1);
            Err(ProviderError::Transport("timeout".into()))
        });
        assert!(r.is_err());
        assert_eq!(calls.get(), 3);

        calls.set(0);
        let r: Result<(), _> = RetryPolicy::no_wait(3).run(|_| {
            calls.set(calls.get() + 1);
            Err(ProviderError::InvalidResponse("empty".into()))
        });
        assert!(r.is_err());
        assert_eq!(calls.get(), 1);

        calls.set(0);
        let r = RetryPolicy::no_wait(3).run(|attempt| {
            calls.set(calls.get() + 1);
            if attempt < 2 {
                Err(ProviderError::Status { status: 503, body: String::new() })
            } else {
                Ok(7)
            }
        });
        assert_eq!(r, Ok(7));
        assert_eq!(calls.get(), 3);
    }

    #[test]
    fn backoff_doubles_from_one_second() {
        let p = RetryPolicy::default();
        assert_eq!(p.attempts, 3);
        assert_eq!(p.backoff(0), Duration::from_secs(1));
        assert_eq!(p.backoff(1), Duration::from_secs(2));
        assert_eq!(p.backoff(2), Duration::from_secs(4));
    }

    #[test]
    fn status_classification() {
        assert!(ProviderError::Status { status: 429, body: String::new() }.is_retryable());
        assert!(!ProviderError::Status { status: 401, body: String::new() }.is_retryable());
    }
}
