//! Content-hash memoization for oracle calls.
//!
//! Entries are keyed by a stable hash of the call inputs and tagged with a
//! [`CacheEpoch`]. Bumping the epoch invalidates everything cached so far,
//! which is what a training loop does after every policy update so that
//! Shapley-weighted rewards always reflect the current model.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;

use super::{ActionRequest, AnswerScorer, Capabilities, FactChecker, Policy, PolicyAction};
use crate::error::Result;
use crate::hash::StableHasher;
use crate::model::{AtomicFact, FactId, PartialQuestion, PatientCase};

/// Shared, monotonically increasing cache generation.
#[derive(Debug, Clone, Default)]
pub struct CacheEpoch(Arc<AtomicU64>);

impl CacheEpoch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn current(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }

    /// Starts a new generation; returns its number.
    pub fn bump(&self) -> u64 {
        self.0.fetch_add(1, Ordering::SeqCst) + 1
    }
}

#[derive(Debug)]
struct Inner<V> {
    epoch: u64,
    map: HashMap<u64, V>,
    hits: u64,
    misses: u64,
}

/// Concurrency-safe memo table.
#[derive(Debug)]
pub struct MemoCache<V> {
    epoch: CacheEpoch,
    inner: Mutex<Inner<V>>,
}

impl<V: Clone> MemoCache<V> {
    pub fn new(epoch: CacheEpoch) -> Self {
        let current = epoch.current();
        MemoCache {
            epoch,
            inner: Mutex::new(Inner {
                epoch: current,
                map: HashMap::new(),
                hits: 0,
                misses: 0,
            }),
        }
    }

    fn lookup(&self, key: u64) -> Option<V> {
        let current = self.epoch.current();
        let mut inner = self.inner.lock();
        if inner.epoch != current {
            inner.epoch = current;
            inner.map.clear();
        }
        let found = inner.map.get(&key).cloned();
        if found.is_some() {
            inner.hits += 1;
        } else {
            inner.misses += 1;
        }
        found
    }

    fn store(&self, key: u64, epoch: u64, value: V) {
        let mut inner = self.inner.lock();
        // A result computed under an older epoch must not be published.
        if inner.epoch == epoch {
            inner.map.insert(key, value);
        }
    }

    /// Returns the cached value or computes and stores it. The lock is not
    /// held while `compute` runs, so concurrent misses may compute twice;
    /// oracles are pure, so both results agree.
    pub fn get_or_try_insert(&self, key: u64, compute: impl FnOnce() -> Result<V>) -> Result<V> {
        if let Some(v) = self.lookup(key) {
            return Ok(v);
        }
        let epoch = self.epoch.current();
        let value = compute()?;
        self.store(key, epoch, value.clone());
        Ok(value)
    }

    /// (hits, misses) since construction.
    pub fn stats(&self) -> (u64, u64) {
        let inner = self.inner.lock();
        (inner.hits, inner.misses)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Memoizing wrapper for an [`AnswerScorer`].
#[derive(Debug)]
pub struct CachedScorer<S> {
    inner: S,
    cache: MemoCache<f64>,
}

impl<S: AnswerScorer> CachedScorer<S> {
    pub fn new(inner: S, epoch: CacheEpoch) -> Self {
        CachedScorer {
            inner,
            cache: MemoCache::new(epoch),
        }
    }

    pub fn stats(&self) -> (u64, u64) {
        self.cache.stats()
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }
}

impl<S: AnswerScorer> AnswerScorer for CachedScorer<S> {
    fn answer_logprob(&self, case: &PatientCase, subset: &[FactId]) -> Result<f64> {
        let mut h = StableHasher::new()
            .str(&case.case_id)
            .str(&case.atomic_question)
            .str(&case.gold_answer.to_string())
            .u64(subset.len() as u64);
        for &id in subset {
            h = h.u64(id as u64).str(&case.facts[id].text);
        }
        self.cache
            .get_or_try_insert(h.finish(), || self.inner.answer_logprob(case, subset))
    }

    fn capabilities(&self) -> Capabilities {
        self.inner.capabilities()
    }
}

/// Memoizing wrapper for a [`FactChecker`].
#[derive(Debug)]
pub struct CachedChecker<C> {
    inner: C,
    cache: MemoCache<bool>,
}

impl<C: FactChecker> CachedChecker<C> {
    pub fn new(inner: C, epoch: CacheEpoch) -> Self {
        CachedChecker {
            inner,
            cache: MemoCache::new(epoch),
        }
    }

    pub fn stats(&self) -> (u64, u64) {
        self.cache.stats()
    }
}

impl<C: FactChecker> FactChecker for CachedChecker<C> {
    fn entails(&self, understanding: &str, fact: &AtomicFact) -> Result<bool> {
        let key = StableHasher::new()
            .str(understanding)
            .u64(fact.id as u64)
            .str(&fact.text)
            .finish();
        self.cache
            .get_or_try_insert(key, || self.inner.entails(understanding, fact))
    }

    fn capabilities(&self) -> Capabilities {
        self.inner.capabilities()
    }
}

/// Memoizes a policy's understanding summaries; action sampling passes through.
#[derive(Debug)]
pub struct CachedPolicy<P> {
    inner: P,
    cache: MemoCache<String>,
}

impl<P: Policy> CachedPolicy<P> {
    pub fn new(inner: P, epoch: CacheEpoch) -> Self {
        CachedPolicy {
            inner,
            cache: MemoCache::new(epoch),
        }
    }
}

impl<P: Policy> Policy for CachedPolicy<P> {
    fn next_action(&self, req: &ActionRequest<'_>) -> Result<PolicyAction> {
        self.inner.next_action(req)
    }

    fn understanding(
        &self,
        case: &PatientCase,
        partial: &PartialQuestion,
        history: &[(String, String)],
    ) -> Result<String> {
        let mut h = StableHasher::new()
            .str(&case.case_id)
            .str(&partial.rendered_text);
        for (q, r) in history {
            h = h.str(q).str(r);
        }
        self.cache.get_or_try_insert(h.finish(), || {
            self.inner.understanding(case, partial, history)
        })
    }

    fn capabilities(&self) -> Capabilities {
        self.inner.capabilities()
    }
}
