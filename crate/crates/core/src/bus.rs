//! In-process publish/subscribe bus keyed by hierarchical topic paths.
//!
//! Topics look like `/device/measure_v`: a leading `/` and no empty
//! segments. Subscriptions take an exact topic or a prefix wildcard
//! (`/device/*` matches everything below `/device`, `/*` matches all).
//!
//! Every subscription owns a bounded queue. Publishing never blocks: when a
//! queue is full its oldest message is dropped and the drop counter of that
//! subscription goes up.
//!
//! Output topics additionally have a [`WriteSink`] registered. Publishing to
//! such a topic hands the value to the sink (the device write path) before
//! delivering it to subscribers.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock, Weak};
use std::time::Duration;

use serde_json::json;
use thiserror::Error;
use tokio::sync::Notify;

use crate::clock::now_us;
use crate::codec::{IoValue, ValueType};
use crate::device::WriteError;

pub const DEFAULT_QUEUE_DEPTH: usize = 1024;

#[derive(Debug, Error)]
pub enum BusError {
    #[error("invalid topic '{0}'")]
    InvalidTopic(String),
    #[error(transparent)]
    Write(#[from] WriteError),
}

/// A nonempty path segment without `/`, `*` or whitespace.
pub fn is_valid_segment(segment: &str) -> bool {
    !segment.is_empty() && !segment.chars().any(|c| c == '/' || c == '*' || c.is_whitespace())
}

pub fn is_valid_topic(topic: &str) -> bool {
    match topic.strip_prefix('/') {
        Some(rest) => rest.split('/').all(is_valid_segment),
        None => false,
    }
}

fn check_topic(topic: &str) -> Result<(), BusError> {
    if is_valid_topic(topic) {
        Ok(())
    } else {
        Err(BusError::InvalidTopic(topic.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct TopicMessage {
    pub topic: String,
    pub value: IoValue,
    /// Capture time for reads, receive time for writes (µs since epoch).
    pub ts_us: u64,
}

impl TopicMessage {
    pub fn new(topic: impl Into<String>, value: IoValue, ts_us: u64) -> Self {
        TopicMessage {
            topic: topic.into(),
            value,
            ts_us,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({ "topic": self.topic, "value": self.value.to_json(), "ts_us": self.ts_us })
    }
}

/// A message as handed to one subscriber, stamped with the time it was
/// published on the bus.
#[derive(Debug, Clone)]
pub struct Delivered {
    pub message: TopicMessage,
    pub published_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TopicPattern {
    Exact(String),
    /// Stored with its trailing `/`.
    Prefix(String),
    All,
}

impl TopicPattern {
    pub fn parse(pattern: &str) -> Result<TopicPattern, BusError> {
        if pattern == "/*" {
            return Ok(TopicPattern::All);
        }
        if let Some(base) = pattern.strip_suffix("/*") {
            check_topic(base).map_err(|_| BusError::InvalidTopic(pattern.to_string()))?;
            return Ok(TopicPattern::Prefix(format!("{base}/")));
        }
        check_topic(pattern)?;
        Ok(TopicPattern::Exact(pattern.to_string()))
    }

    pub fn matches(&self, topic: &str) -> bool {
        match self {
            TopicPattern::Exact(t) => t == topic,
            TopicPattern::Prefix(p) => topic.starts_with(p.as_str()),
            TopicPattern::All => true,
        }
    }
}

impl fmt::Display for TopicPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopicPattern::Exact(t) => f.write_str(t),
            TopicPattern::Prefix(p) => write!(f, "{p}*"),
            TopicPattern::All => f.write_str("/*"),
        }
    }
}

/// Topic rename rule `FROM=TO`. Applies to `FROM` itself and to every topic
/// below it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicRemap {
    pub from: String,
    pub to: String,
}

impl TopicRemap {
    pub fn apply(&self, topic: &str) -> Option<String> {
        if topic == self.from {
            return Some(self.to.clone());
        }
        let rest = topic.strip_prefix(self.from.as_str())?;
        rest.starts_with('/').then(|| format!("{}{rest}", self.to))
    }
}

impl std::str::FromStr for TopicRemap {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (from, to) = s
            .split_once('=')
            .ok_or_else(|| format!("remap '{s}' is not of the form FROM=TO"))?;
        for t in [from, to] {
            if !is_valid_topic(t) {
                return Err(format!("invalid topic '{t}' in remap '{s}'"));
            }
        }
        Ok(TopicRemap {
            from: from.to_string(),
            to: to.to_string(),
        })
    }
}

/// Receiver of values published to an output topic.
pub trait WriteSink: Send + Sync {
    /// Type the sink expects; used to interpret untyped (JSON) values.
    fn value_type(&self) -> ValueType;

    /// Accepts a value without blocking.
    fn submit(&self, value: IoValue, received_us: u64) -> Result<(), WriteError>;
}

struct SubQueue {
    pattern: TopicPattern,
    capacity: usize,
    items: Mutex<VecDeque<Delivered>>,
    notify: Notify,
    dropped: AtomicU64,
}

impl SubQueue {
    fn push(&self, delivered: Delivered) {
        {
            let mut items = self.items.lock().unwrap();
            if items.len() >= self.capacity {
                items.pop_front();
                self.dropped.fetch_add(1, Ordering::Relaxed);
            }
            items.push_back(delivered);
        }
        self.notify.notify_one();
    }

    fn pop(&self) -> Option<Delivered> {
        self.items.lock().unwrap().pop_front()
    }
}

/// Receiving end of a subscription. Dropping it unsubscribes.
pub struct Subscription {
    queue: Arc<SubQueue>,
}

impl Subscription {
    pub fn pattern(&self) -> &TopicPattern {
        &self.queue.pattern
    }

    pub async fn recv(&self) -> TopicMessage {
        self.recv_delivered().await.message
    }

    pub async fn recv_delivered(&self) -> Delivered {
        loop {
            let notified = self.queue.notify.notified();
            if let Some(d) = self.queue.pop() {
                return d;
            }
            notified.await;
        }
    }

    pub async fn recv_timeout(&self, timeout: Duration) -> Option<TopicMessage> {
        tokio::time::timeout(timeout, self.recv()).await.ok()
    }

    pub fn try_recv(&self) -> Option<TopicMessage> {
        self.queue.pop().map(|d| d.message)
    }

    pub fn try_recv_delivered(&self) -> Option<Delivered> {
        self.queue.pop()
    }

    /// Messages currently queued.
    pub fn len(&self) -> usize {
        self.queue.items.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Messages discarded because the queue was full.
    pub fn dropped(&self) -> u64 {
        self.queue.dropped.load(Ordering::Relaxed)
    }
}

struct Inner {
    subscriptions: RwLock<Vec<Weak<SubQueue>>>,
    sinks: RwLock<HashMap<String, Arc<dyn WriteSink>>>,
    queue_depth: usize,
    published: AtomicU64,
}

/// Cheap to clone; clones share the same bus.
#[derive(Clone)]
pub struct Bus {
    inner: Arc<Inner>,
}

impl Default for Bus {
    fn default() -> Self {
        Bus::new(DEFAULT_QUEUE_DEPTH)
    }
}

impl Bus {
    /// `queue_depth` is the default capacity of new subscriptions.
    pub fn new(queue_depth: usize) -> Bus {
        Bus {
            inner: Arc::new(Inner {
                subscriptions: RwLock::new(Vec::new()),
                sinks: RwLock::new(HashMap::new()),
                queue_depth: queue_depth.max(1),
                published: AtomicU64::new(0),
            }),
        }
    }

    pub fn queue_depth(&self) -> usize {
        self.inner.queue_depth
    }

    pub fn subscribe(&self, pattern: &str) -> Result<Subscription, BusError> {
        self.subscribe_with_depth(pattern, self.inner.queue_depth)
    }

    pub fn subscribe_with_depth(&self, pattern: &str, depth: usize) -> Result<Subscription, BusError> {
        let queue = Arc::new(SubQueue {
            pattern: TopicPattern::parse(pattern)?,
            capacity: depth.max(1),
            items: Mutex::new(VecDeque::new()),
            notify: Notify::new(),
            dropped: AtomicU64::new(0),
        });
        self.inner
            .subscriptions
            .write()
            .unwrap()
            .push(Arc::downgrade(&queue));
        Ok(Subscription { queue })
    }

    /// Publishes a message. If the topic has a write sink, the sink must
    /// accept the value first; a rejected value is not delivered.
    pub fn publish(&self, message: TopicMessage) -> Result<(), BusError> {
        check_topic(&message.topic)?;
        if let Some(sink) = self.sink(&message.topic) {
            sink.submit(message.value.clone(), message.ts_us)?;
        }
        self.deliver(message);
        Ok(())
    }

    fn deliver(&self, message: TopicMessage) {
        let published_us = now_us();
        let mut dead = false;
        {
            let subs = self.inner.subscriptions.read().unwrap();
            for weak in subs.iter() {
                match weak.upgrade() {
                    Some(q) if q.pattern.matches(&message.topic) => q.push(Delivered {
                        message: message.clone(),
                        published_us,
                    }),
                    Some(_) => {}
                    None => dead = true,
                }
            }
        }
        self.inner.published.fetch_add(1, Ordering::Relaxed);
        if dead {
            self.inner
                .subscriptions
                .write()
                .unwrap()
                .retain(|w| w.strong_count() > 0);
        }
    }

    pub fn register_sink(&self, topic: &str, sink: Arc<dyn WriteSink>) -> Result<(), BusError> {
        check_topic(topic)?;
        self.inner
            .sinks
            .write()
            .unwrap()
            .insert(topic.to_string(), sink);
        Ok(())
    }

    pub fn unregister_sink(&self, topic: &str) {
        self.inner.sinks.write().unwrap().remove(topic);
    }

    pub fn sink(&self, topic: &str) -> Option<Arc<dyn WriteSink>> {
        self.inner.sinks.read().unwrap().get(topic).cloned()
    }

    pub fn sink_topics(&self) -> Vec<String> {
        let mut topics: Vec<String> = self.inner.sinks.read().unwrap().keys().cloned().collect();
        topics.sort();
        topics
    }

    pub fn subscriber_count(&self) -> usize {
        self.inner
            .subscriptions
            .read()
            .unwrap()
            .iter()
            .filter(|w| w.strong_count() > 0)
            .count()
    }

    /// Total messages published so far.
    pub fn published(&self) -> u64 {
        self.inner.published.load(Ordering::Relaxed)
    }
}
