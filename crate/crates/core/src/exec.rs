//! Pluggable fan-out for embarrassingly parallel work.
//!
//! Results are always returned in input order, so any reduction over them
//! is independent of how the work was scheduled.

use alloc::vec::Vec;

pub trait Executor: Sync {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send;
}

/// Runs everything on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
}
