//! Non-blocking telemetry fan-out.
//!
//! The tick thread publishes into one bounded queue per subscriber. A full
//! queue evicts its oldest message and bumps the subscriber's drop counter,
//! so a stalled consumer never holds up the loop.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use crossbeam_queue::ArrayQueue;
use serde::{Deserialize, Serialize};

use crate::control::ControlConfig;
use crate::session::Phase;

pub const DEFAULT_DECIMATION: u32 = 20;
pub const DEFAULT_QUEUE_CAPACITY: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub t_ms: u64,
    pub emg_percent: f64,
    pub reference: f64,
    pub position: f64,
    pub config: ControlConfig,
}

/// What the tick thread pushes to subscribers.
#[derive(Debug, Clone, PartialEq)]
pub enum Published {
    Frame(TelemetryFrame),
    Phase(Phase),
}

struct Subscriber {
    queue: ArrayQueue<Published>,
    dropped: AtomicU64,
    closed: AtomicBool,
    signal: (Mutex<()>, Condvar),
}

/// Consumer side of one subscription.
#[derive(Clone)]
pub struct TelemetryReceiver {
    inner: Arc<Subscriber>,
}

impl TelemetryReceiver {
    pub fn try_recv(&self) -> Option<Published> {
        self.inner.queue.pop()
    }

    /// Waits up to `timeout` for a message.
    pub fn recv_timeout(&self, timeout: Duration) -> Option<Published> {
        let deadline = Instant::now() + timeout;
        loop {
            if let Some(m) = self.inner.queue.pop() {
                return Some(m);
            }
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            // Publishers notify without taking the lock, so wake-ups can be
            // missed; the short wait bounds the extra latency.
            let (lock, cv) = &self.inner.signal;
            let guard = lock.lock().unwrap_or_else(|e| e.into_inner());
            let wait = (deadline - now).min(Duration::from_millis(2));
            let _ = cv.wait_timeout(guard, wait);
        }
    }

    pub fn dropped(&self) -> u64 {
        self.inner.dropped.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.inner.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.queue.is_empty()
    }

    /// Unsubscribes; the hub forgets the queue on its next publish.
    pub fn close(&self) {
        self.inner.closed.store(true, Ordering::Relaxed);
    }
}

/// Subscriber registry shared between the tick thread and consumers.
#[derive(Clone, Default)]
pub struct TelemetryHub {
    subs: Arc<Mutex<Vec<Arc<Subscriber>>>>,
    missed: Arc<AtomicU64>,
}

impl TelemetryHub {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn subscribe(&self, capacity: usize) -> TelemetryReceiver {
        let sub = Arc::new(Subscriber {
            queue: ArrayQueue::new(capacity.max(1)),
            dropped: AtomicU64::new(0),
            closed: AtomicBool::new(false),
            signal: (Mutex::new(()), Condvar::new()),
        });
        self.subs
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(Arc::clone(&sub));
        TelemetryReceiver { inner: sub }
    }

    pub fn subscriber_count(&self) -> usize {
        self.subs.lock().map(|s| s.len()).unwrap_or(0)
    }

    /// Publishes that were skipped because the registry was being modified.
    pub fn missed(&self) -> u64 {
        self.missed.load(Ordering::Relaxed)
    }

    /// Called from the tick thread. Never blocks: if a consumer thread is
    /// registering at this instant the message is skipped and counted.
    pub fn publish(&self, msg: Published) {
        let Ok(mut subs) = self.subs.try_lock() else {
            self.missed.fetch_add(1, Ordering::Relaxed);
            return;
        };
        subs.retain(|s| !s.closed.load(Ordering::Relaxed));
        for s in subs.iter() {
            if s.queue.force_push(msg.clone()).is_some() {
                s.dropped.fetch_add(1, Ordering::Relaxed);
            }
            s.signal.1.notify_one();
        }
    }
}
