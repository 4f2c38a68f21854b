//! Latest-value publication slot: one writer replaces the value, any number
//! of readers take cheap frozen snapshots and never block the writer for
//! longer than a pointer swap.

use std::sync::{Arc, RwLock};

#[derive(Debug)]
pub struct LatestSlot<T> {
    inner: RwLock<Arc<T>>,
}

impl<T> LatestSlot<T> {
    pub fn new(value: T) -> Self {
        Self { inner: RwLock::new(Arc::new(value)) }
    }

    pub fn publish(&self, value: T) {
        let next = Arc::new(value);
        *self.inner.write().unwrap_or_else(|e| e.into_inner()) = next;
    }

    pub fn snapshot(&self) -> Arc<T> {
        Arc::clone(&self.inner.read().unwrap_or_else(|e| e.into_inner()))
    }
}

impl<T: Default> Default for LatestSlot<T> {
    fn default() -> Self {
        Self::new(T::default())
    }
}
