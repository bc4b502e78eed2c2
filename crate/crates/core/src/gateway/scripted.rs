//! Offline backends for fixtures and tests.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::tokenizer::{count_tokens, truncate_to_tokens};
use super::{BackendError, BackendReply, ChatBackend, CompletionRequest, FinishReason};

type Responder = Box<dyn Fn(&CompletionRequest) -> Option<String> + Send + Sync>;

/// Answers from a closure or a fixed queue. Answers longer than the request's
/// `max_output_tokens` (under the fallback tokenizer) are cut at a token
/// boundary and reported with `finish_reason = length`, the way a real
/// backend truncates. No usage block is reported.
pub struct ScriptedBackend {
    responder: Responder,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn from_fn(f: impl Fn(&CompletionRequest) -> Option<String> + Send + Sync + 'static) -> Self {
        Self {
            responder: Box::new(f),
            calls: AtomicUsize::new(0),
        }
    }

    /// Hand out `responses` in order, one per call.
    pub fn from_queue<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let queue: Mutex<VecDeque<String>> =
            Mutex::new(responses.into_iter().map(Into::into).collect());
        Self::from_fn(move |_| queue.lock().unwrap().pop_front())
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<BackendReply, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let text = (self.responder)(request)
            .ok_or_else(|| BackendError::Other("scripted backend has no response".into()))?;
        let budget = u64::from(request.max_output_tokens);
        if count_tokens(&text) > budget {
            return Ok(BackendReply {
                content: truncate_to_tokens(&text, budget).to_string(),
                finish_reason: FinishReason::Length,
                usage: None,
            });
        }
        Ok(BackendReply {
            content: text,
            finish_reason: FinishReason::Stop,
            usage: None,
        })
    }
}

/// Fails every call. Wire this behind a replay gateway to prove that no
/// request ever reaches a live backend.
#[derive(Debug, Default, Clone, Copy)]
pub struct FailingBackend;

impl ChatBackend for FailingBackend {
    fn complete(&self, _request: &CompletionRequest) -> Result<BackendReply, BackendError> {
        Err(BackendError::Other("backend contacted unexpectedly".into()))
    }
}
