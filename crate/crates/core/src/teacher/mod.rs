//! Prompt assembly, teacher clients (scripted mock and remote
//! chat-completion endpoint), and rationale distillation.

mod distill;
mod mock;
pub mod prompts;
mod remote;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crate::TeacherError;

pub use distill::{
    distill_rationales, validate_lab_rationale, validate_note_rationale, DistillOutcome,
    LAB_PREFIX, NOTE_PREFIX, NO_DISEASE_RATIONALE,
};
pub use mock::{MockScript, MockTeacher};
pub use prompts::{Exemplars, PromptKind, PromptTemplate};
pub use remote::{RemoteConfig, RemoteTeacher};

/// Anything that turns a prompt into a completion.
pub trait Teacher: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, TeacherError>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(200),
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    /// No sleeping between attempts; for mocks and tests.
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            initial_backoff: Duration::ZERO,
            multiplier: 1.0,
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        self.initial_backoff
            .mul_f64(self.multiplier.powi(attempt.saturating_sub(1) as i32))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TeacherMode {
    Mock,
    Remote,
}

/// A teacher plus its retry policy and a call counter.
#[derive(Clone)]
pub struct TeacherClient {
    teacher: Arc<dyn Teacher>,
    pub mode: TeacherMode,
    pub retry: RetryPolicy,
    calls: Arc<AtomicU64>,
}

impl TeacherClient {
    pub fn new(teacher: Arc<dyn Teacher>, mode: TeacherMode, retry: RetryPolicy) -> Self {
        Self {
            teacher,
            mode,
            retry,
            calls: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn mock(teacher: MockTeacher) -> Self {
        Self::new(Arc::new(teacher), TeacherMode::Mock, RetryPolicy::immediate(3))
    }

    pub fn remote(config: RemoteConfig, retry: RetryPolicy) -> Self {
        Self::new(Arc::new(RemoteTeacher::new(config)), TeacherMode::Remote, retry)
    }

    /// Total prompts sent so far, including retries.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// Sends `prompt` until `accept` returns `Ok` or attempts run out.
    /// Configuration errors are not retried.
    pub fn complete_with<T>(
        &self,
        prompt: &str,
        accept: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, TeacherError> {
        let mut last = String::new();
        for attempt in 1..=self.retry.max_attempts {
            if attempt > 1 {
                let wait = self.retry.backoff(attempt - 1);
                if !wait.is_zero() {
                    std::thread::sleep(wait);
                }
            }
            self.calls.fetch_add(1, Ordering::SeqCst);
            match self.teacher.complete(prompt) {
                Ok(text) => match accept(&text) {
                    Ok(v) => return Ok(v),
                    Err(why) => last = format!("invalid response: {why}"),
                },
                Err(e @ TeacherError::Config(_)) => return Err(e),
                Err(e) => last = e.to_string(),
            }
            log::debug!("teacher attempt {attempt} failed: {last}");
        }
        Err(TeacherError::Exhausted {
            attempts: self.retry.max_attempts,
            last,
        })
    }
}
