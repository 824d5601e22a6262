//! Bounded queue that drops the oldest entry when full.
//!
//! Pushing never blocks on the consumer; every eviction is counted.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

#[derive(Debug)]
pub struct DropOldestQueue<T> {
    inner: Mutex<Inner<T>>,
    ready: Condvar,
    capacity: usize,
    dropped: AtomicU64,
    pushed: AtomicU64,
}

#[derive(Debug)]
struct Inner<T> {
    items: VecDeque<T>,
    closed: bool,
}

#[derive(Debug, PartialEq, Eq)]
pub enum Pop<T> {
    Item(T),
    Timeout,
    Closed,
}

impl<T> DropOldestQueue<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "queue capacity must be positive");
        Self {
            inner: Mutex::new(Inner {
                items: VecDeque::with_capacity(capacity),
                closed: false,
            }),
            ready: Condvar::new(),
            capacity,
            dropped: AtomicU64::new(0),
            pushed: AtomicU64::new(0),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Enqueues `item`, evicting the oldest entry if full. Returns the evicted
    /// entry. Pushing to a closed queue discards the item.
    pub fn push(&self, item: T) -> Option<T> {
        let mut g = self.inner.lock().unwrap();
        if g.closed {
            return None;
        }
        let evicted = if g.items.len() >= self.capacity {
            self.dropped.fetch_add(1, Ordering::Relaxed);
            g.items.pop_front()
        } else {
            None
        };
        g.items.push_back(item);
        self.pushed.fetch_add(1, Ordering::Relaxed);
        drop(g);
        self.ready.notify_one();
        evicted
    }

    /// Waits up to `timeout` for an item. Remaining items are still delivered
    /// after close; `Closed` is returned only once the queue is drained.
    pub fn pop_timeout(&self, timeout: Duration) -> Pop<T> {
        let g = self.inner.lock().unwrap();
        let (mut g, _) = self
            .ready
            .wait_timeout_while(g, timeout, |i| i.items.is_empty() && !i.closed)
            .unwrap();
        match g.items.pop_front() {
            Some(item) => Pop::Item(item),
            None if g.closed => Pop::Closed,
            None => Pop::Timeout,
        }
    }

    /// Blocks until an item arrives or the queue is closed and drained.
    pub fn pop(&self) -> Option<T> {
        loop {
            match self.pop_timeout(Duration::from_millis(100)) {
                Pop::Item(t) => return Some(t),
                Pop::Closed => return None,
                Pop::Timeout => {}
            }
        }
    }

    pub fn try_pop(&self) -> Option<T> {
        self.inner.lock().unwrap().items.pop_front()
    }

    pub fn close(&self) {
        self.inner.lock().unwrap().closed = true;
        self.ready.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.inner.lock().unwrap().closed
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    pub fn pushed(&self) -> u64 {
        self.pushed.load(Ordering::Relaxed)
    }
}
