use super::{BackendDescriptor, Evaluation, LmError, PerplexityBackend};
use std::sync::atomic::{AtomicUsize, Ordering};

/// Wraps a backend and counts `evaluate` calls.
#[derive(Debug)]
pub struct CountingBackend<B> {
    inner: B,
    calls: AtomicUsize,
}

impl<B> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) -> usize {
        self.calls.swap(0, Ordering::SeqCst)
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: PerplexityBackend> PerplexityBackend for CountingBackend<B> {
    fn descriptor(&self) -> BackendDescriptor {
        self.inner.descriptor()
    }

    fn evaluate(&self, input: &str) -> Result<Evaluation, LmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.evaluate(input)
    }
}
