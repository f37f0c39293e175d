//! Connection to one Modbus/TCP slave.
//!
//! A [`Device`] owns the TCP connection and is the only place where Modbus
//! transactions happen, so at most one transaction is in flight at a time.
//! It polls the read plan at a fixed rate, decodes every mapped IO and
//! publishes it to the bus. Writes arrive through a [`DeviceHandle`] or the
//! bus write topics, are queued, and are issued before any further queued
//! range read of the current poll.
//!
//! Transport faults (timeouts, resets, mismatched transaction ids, malformed
//! frames) drop the connection; reconnects back off exponentially. Exception
//! responses only affect the range or write they answer.

use std::collections::HashMap;
use std::io;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;
use tokio::io::AsyncWriteExt;
use tokio::net::TcpStream;
use tokio::sync::{mpsc, oneshot, watch};
use tokio::time::{interval, timeout, MissedTickBehavior};
use tracing::{debug, info, warn};

use crate::bus::{Bus, BusError, TopicMessage, WriteSink};
use crate::clock::now_us;
use crate::codec::{decode_bits, decode_registers, encode_registers, CodecError, IoValue, ValueType, WordOrder};
use crate::config::{DeviceConfig, IoMapping};
use crate::planner::{plan, PlanError, PlannerPolicy, RawData, ReadPlan, ReadRange};
use crate::wire::{
    decode_response, encode_request, read_adu, ExceptionCode, Reassembler, Request, Response, WireError,
    WritePayload,
};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(1);
pub const DEFAULT_WRITE_QUEUE_DEPTH: usize = 256;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WriteError {
    #[error("no io named '{0}'")]
    UnknownIo(String),
    #[error("'{0}' is read-only")]
    WriteToInput(String),
    #[error("'{io}' expects {expected}, got {actual}")]
    TypeMismatch {
        io: String,
        expected: String,
        actual: String,
    },
    #[error(transparent)]
    Codec(CodecError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("slave answered with exception {0}")]
    Exception(ExceptionCode),
    #[error("transport: {0}")]
    Transport(String),
    #[error("write queue is full")]
    QueueFull,
    #[error("device is shut down")]
    Shutdown,
}

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Bus(#[from] BusError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backoff {
    pub initial: Duration,
    pub factor: u32,
    pub max: Duration,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff {
            initial: Duration::from_millis(500),
            factor: 2,
            max: Duration::from_secs(8),
        }
    }
}

impl Backoff {
    pub fn next(&self, current: Duration) -> Duration {
        (current * self.factor).min(self.max)
    }
}

#[derive(Debug, Clone)]
pub struct DeviceOptions {
    pub policy: PlannerPolicy,
    /// Per-transaction response timeout, also used for connecting.
    pub timeout: Duration,
    pub backoff: Backoff,
    pub write_queue_depth: usize,
}

impl Default for DeviceOptions {
    fn default() -> Self {
        DeviceOptions {
            policy: PlannerPolicy::default(),
            timeout: DEFAULT_TIMEOUT,
            backoff: Backoff::default(),
            write_queue_depth: DEFAULT_WRITE_QUEUE_DEPTH,
        }
    }
}

impl DeviceOptions {
    /// Defaults with the planner settings a config file carries.
    pub fn for_config(config: &DeviceConfig) -> Self {
        let mut options = DeviceOptions::default();
        if let Some(gap) = config.max_gap {
            options.policy.max_gap_registers = gap;
            options.policy.max_gap_bits = gap;
        }
        options.policy.max_read_count = config.max_read_count;
        options
    }
}

#[derive(Debug, Default)]
struct Stats {
    polls: AtomicU64,
    completed_polls: AtomicU64,
    skipped_polls: AtomicU64,
    overruns: AtomicU64,
    transactions: AtomicU64,
    exceptions: AtomicU64,
    transport_errors: AtomicU64,
    connects: AtomicU64,
    connect_failures: AtomicU64,
    writes: AtomicU64,
    failed_writes: AtomicU64,
    last_poll_us: AtomicU64,
    backoff_us: AtomicU64,
    connected: AtomicU64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct StatsSnapshot {
    /// Poll cycles started.
    pub polls: u64,
    pub completed_polls: u64,
    /// Cycles skipped or cut short by a transport fault or pending backoff.
    pub skipped_polls: u64,
    /// Cycles that ran past their period.
    pub overruns: u64,
    pub transactions: u64,
    pub exceptions: u64,
    pub transport_errors: u64,
    pub connects: u64,
    pub connect_failures: u64,
    pub writes: u64,
    pub failed_writes: u64,
    /// Duration of the latest poll cycle.
    pub last_poll_us: u64,
    /// Reconnect delay currently in effect.
    pub backoff_us: u64,
    pub connected: bool,
}

impl Stats {
    fn snapshot(&self) -> StatsSnapshot {
        let get = |a: &AtomicU64| a.load(Ordering::Relaxed);
        StatsSnapshot {
            polls: get(&self.polls),
            completed_polls: get(&self.completed_polls),
            skipped_polls: get(&self.skipped_polls),
            overruns: get(&self.overruns),
            transactions: get(&self.transactions),
            exceptions: get(&self.exceptions),
            transport_errors: get(&self.transport_errors),
            connects: get(&self.connects),
            connect_failures: get(&self.connect_failures),
            writes: get(&self.writes),
            failed_writes: get(&self.failed_writes),
            last_poll_us: get(&self.last_poll_us),
            backoff_us: get(&self.backoff_us),
            connected: get(&self.connected) == 1,
        }
    }
}

fn bump(counter: &AtomicU64) {
    counter.fetch_add(1, Ordering::Relaxed);
}

struct WriteJob {
    mapping: Arc<IoMapping>,
    request: Request,
    received_us: u64,
    reply: Option<oneshot::Sender<Result<(), WriteError>>>,
}

struct Shared {
    device: String,
    word_order: WordOrder,
    outputs: HashMap<String, Arc<IoMapping>>,
    inputs: HashMap<String, Arc<IoMapping>>,
    writes: mpsc::Sender<WriteJob>,
    stats: Stats,
    shutdown: watch::Sender<bool>,
}

impl Shared {
    fn prepare(&self, io_name: &str, value: &IoValue) -> Result<(Arc<IoMapping>, Request), WriteError> {
        let Some(mapping) = self.outputs.get(io_name) else {
            return Err(if self.inputs.contains_key(io_name) {
                WriteError::WriteToInput(io_name.to_string())
            } else {
                WriteError::UnknownIo(io_name.to_string())
            });
        };
        let request = prepare_write(mapping, value, self.word_order)?;
        Ok((Arc::clone(mapping), request))
    }

    fn enqueue(&self, job: WriteJob) -> Result<(), WriteError> {
        self.writes.try_send(job).map_err(|e| match e {
            mpsc::error::TrySendError::Full(_) => WriteError::QueueFull,
            mpsc::error::TrySendError::Closed(_) => WriteError::Shutdown,
        })
    }
}

/// Encodes `value` as the write request for `mapping`.
pub fn prepare_write(mapping: &IoMapping, value: &IoValue, order: WordOrder) -> Result<Request, WriteError> {
    if !mapping.table.is_output() {
        return Err(WriteError::WriteToInput(mapping.io_name.clone()));
    }
    let mismatch = || WriteError::TypeMismatch {
        io: mapping.io_name.clone(),
        expected: mapping.value_type.to_string(),
        actual: value.kind().to_string(),
    };
    let payload = match (mapping.value_type, value) {
        (ValueType::Bool, IoValue::Bool(b)) => WritePayload::Bits(vec![*b]),
        (ValueType::Bool, _) => return Err(mismatch()),
        (ValueType::Iec(t), v) => match encode_registers(t, v, order) {
            Ok(words) => WritePayload::Words(words),
            Err(CodecError::TypeMismatch { .. }) => return Err(mismatch()),
            Err(e) => return Err(WriteError::Codec(e)),
        },
    };
    Ok(Request::write(mapping.table, mapping.offset, payload)?)
}

/// Cloneable handle for submitting writes and reading statistics.
#[derive(Clone)]
pub struct DeviceHandle {
    shared: Arc<Shared>,
}

impl DeviceHandle {
    pub fn name(&self) -> &str {
        &self.shared.device
    }

    /// Queues a write and waits until the slave acknowledged it.
    pub async fn write(&self, io_name: &str, value: IoValue) -> Result<(), WriteError> {
        let rx = self.submit(io_name, value, now_us())?;
        rx.await.unwrap_or(Err(WriteError::Shutdown))
    }

    /// Queues a write without waiting. The receiver resolves once the write
    /// completed or failed.
    pub fn submit(
        &self,
        io_name: &str,
        value: IoValue,
        received_us: u64,
    ) -> Result<oneshot::Receiver<Result<(), WriteError>>, WriteError> {
        let (mapping, request) = self.shared.prepare(io_name, &value)?;
        let (tx, rx) = oneshot::channel();
        self.shared.enqueue(WriteJob {
            mapping,
            request,
            received_us,
            reply: Some(tx),
        })?;
        Ok(rx)
    }

    pub fn stats(&self) -> StatsSnapshot {
        self.shared.stats.snapshot()
    }

    /// Stops the poll loop started with [`Device::run`].
    pub fn shutdown(&self) {
        let _ = self.shared.shutdown.send(true);
    }
}

/// Bus sink for one output topic.
struct OutputSink {
    mapping: Arc<IoMapping>,
    shared: Arc<Shared>,
}

impl WriteSink for OutputSink {
    fn value_type(&self) -> ValueType {
        self.mapping.value_type
    }

    fn submit(&self, value: IoValue, received_us: u64) -> Result<(), WriteError> {
        let request = prepare_write(&self.mapping, &value, self.shared.word_order)?;
        self.shared.enqueue(WriteJob {
            mapping: Arc::clone(&self.mapping),
            request,
            received_us,
            reply: None,
        })
    }
}

struct Link {
    stream: TcpStream,
    reassembler: Reassembler,
}

#[derive(Debug)]
enum TransactError {
    /// Connection is unusable and was dropped.
    Transport(String),
    /// Request could not be encoded; the connection is fine.
    Encode(WireError),
}

/// Result of one poll cycle.
#[derive(Debug, Default)]
pub struct FetchReport {
    pub values: Vec<(Arc<IoMapping>, IoValue)>,
    pub errors: Vec<(Arc<IoMapping>, String)>,
    /// Set when the cycle was skipped or aborted by a transport fault.
    pub transport_error: Option<String>,
}

pub struct Device {
    config: Arc<DeviceConfig>,
    plan: Arc<ReadPlan>,
    bus: Bus,
    options: DeviceOptions,
    shared: Arc<Shared>,
    writes: mpsc::Receiver<WriteJob>,
    link: Option<Link>,
    next_tid: u16,
    backoff: Duration,
    retry_at: Option<Instant>,
    sink_topics: Vec<String>,
}

impl Device {
    /// Plans the reads for `config` and registers the output write topics
    /// on `bus`. Does not connect yet.
    pub fn new(config: DeviceConfig, options: DeviceOptions, bus: Bus) -> Result<Device, DeviceError> {
        let mappings: Vec<Arc<IoMapping>> = config.mappings.iter().cloned().map(Arc::new).collect();
        let plan = plan(&mappings, &options.policy)?;
        let (tx, rx) = mpsc::channel(options.write_queue_depth.max(1));
        let (shutdown, _) = watch::channel(false);
        let (outputs, inputs): (Vec<_>, Vec<_>) = mappings.iter().partition(|m| m.table.is_output());
        let by_name = |ms: Vec<&Arc<IoMapping>>| {
            ms.into_iter()
                .map(|m| (m.io_name.clone(), Arc::clone(m)))
                .collect::<HashMap<_, _>>()
        };
        let shared = Arc::new(Shared {
            device: config.name.clone(),
            word_order: config.word_order,
            outputs: by_name(outputs),
            inputs: by_name(inputs),
            writes: tx,
            stats: Stats::default(),
            shutdown,
        });

        let mut sink_topics = Vec::new();
        for m in mappings.iter() {
            if let Some(topic) = &m.write_topic {
                let sink = OutputSink {
                    mapping: Arc::clone(m),
                    shared: Arc::clone(&shared),
                };
                bus.register_sink(topic, Arc::new(sink))?;
                sink_topics.push(topic.clone());
            }
        }

        shared
            .stats
            .backoff_us
            .store(options.backoff.initial.as_micros() as u64, Ordering::Relaxed);
        Ok(Device {
            backoff: options.backoff.initial,
            config: Arc::new(config),
            plan: Arc::new(plan),
            bus,
            options,
            shared,
            writes: rx,
            link: None,
            next_tid: 1,
            retry_at: None,
            sink_topics,
        })
    }

    pub fn config(&self) -> &DeviceConfig {
        &self.config
    }

    pub fn plan(&self) -> &ReadPlan {
        &self.plan
    }

    pub fn handle(&self) -> DeviceHandle {
        DeviceHandle {
            shared: Arc::clone(&self.shared),
        }
    }

    pub fn is_connected(&self) -> bool {
        self.link.is_some()
    }

    /// Connects now, ignoring any pending backoff.
    pub async fn connect(&mut self) -> io::Result<()> {
        let addr = (self.config.address.as_str(), self.config.port);
        let attempt = timeout(self.options.timeout, TcpStream::connect(addr)).await;
        let stream = match attempt {
            Ok(Ok(stream)) => stream,
            Ok(Err(e)) => return Err(self.connect_failed(e)),
            Err(_) => return Err(self.connect_failed(io::Error::new(io::ErrorKind::TimedOut, "connect timed out"))),
        };
        stream.set_nodelay(true)?;
        info!(device = %self.config.name, address = %self.config.address, port = self.config.port, "connected");
        self.link = Some(Link {
            stream,
            reassembler: Reassembler::new(),
        });
        self.backoff = self.options.backoff.initial;
        self.retry_at = None;
        let stats = &self.shared.stats;
        bump(&stats.connects);
        stats.connected.store(1, Ordering::Relaxed);
        stats.backoff_us.store(self.backoff.as_micros() as u64, Ordering::Relaxed);
        Ok(())
    }

    fn connect_failed(&mut self, e: io::Error) -> io::Error {
        bump(&self.shared.stats.connect_failures);
        self.retry_at = Some(Instant::now() + self.backoff);
        warn!(device = %self.config.name, error = %e, retry_in_ms = self.backoff.as_millis() as u64, "connect failed");
        self.backoff = self.options.backoff.next(self.backoff);
        self.shared
            .stats
            .backoff_us
            .store(self.backoff.as_micros() as u64, Ordering::Relaxed);
        e
    }

    fn disconnect(&mut self, reason: &str) {
        if self.link.take().is_some() {
            warn!(device = %self.config.name, reason, "connection dropped");
        }
        bump(&self.shared.stats.transport_errors);
        self.shared.stats.connected.store(0, Ordering::Relaxed);
        self.retry_at = Some(Instant::now() + self.backoff);
    }

    async fn ensure_connected(&mut self) -> Result<(), String> {
        if self.link.is_some() {
            return Ok(());
        }
        if let Some(at) = self.retry_at {
            if Instant::now() < at {
                return Err("waiting for reconnect backoff".into());
            }
        }
        self.connect().await.map_err(|e| e.to_string())
    }

    async fn transact(&mut self, request: &Request) -> Result<(Response, u64), TransactError> {
        let tid = self.next_tid;
        let adu = encode_request(tid, self.config.unit, request).map_err(TransactError::Encode)?;
        let link = self
            .link
            .as_mut()
            .ok_or_else(|| TransactError::Transport("not connected".into()))?;
        self.next_tid = self.next_tid.wrapping_add(1);
        bump(&self.shared.stats.transactions);
        let fc = request.function_code();
        let started = Instant::now();
        debug!(target: "modbus", direction = "tx", fc = fc.value(), tid, "request");

        let exchange = async {
            link.stream.write_all(&adu).await?;
            let bytes = read_adu(&mut link.stream, &mut link.reassembler).await?;
            let captured = now_us();
            bytes
                .map(|b| (b, captured))
                .ok_or_else(|| io::Error::new(io::ErrorKind::UnexpectedEof, "connection closed by slave"))
        };
        let result = match timeout(self.options.timeout, exchange).await {
            Ok(Ok(r)) => Ok(r),
            Ok(Err(e)) => Err(e.to_string()),
            Err(_) => Err(format!("no response within {:?}", self.options.timeout)),
        };
        let outcome = result.and_then(|(bytes, captured)| {
            let (header, response) = decode_response(&bytes).map_err(|e| e.to_string())?;
            if header.transaction_id != tid {
                return Err(format!(
                    "transaction id mismatch: sent {tid}, received {}",
                    header.transaction_id
                ));
            }
            if response.function_code() != fc {
                return Err(format!("response {} does not answer {fc}", response.function_code()));
            }
            Ok((response, captured))
        });
        match outcome {
            Ok((response, captured)) => {
                debug!(
                    target: "modbus",
                    direction = "rx",
                    fc = fc.value(),
                    tid,
                    latency_us = started.elapsed().as_micros() as u64,
                    exception = response.is_exception(),
                    "response"
                );
                Ok((response, captured))
            }
            Err(reason) => {
                self.disconnect(&reason);
                Err(TransactError::Transport(reason))
            }
        }
    }

    async fn execute_write(&mut self, job: WriteJob) {
        let result = self.perform_write(&job).await;
        let stats = &self.shared.stats;
        bump(&stats.writes);
        if let Err(e) = &result {
            bump(&stats.failed_writes);
            warn!(device = %self.config.name, io = %job.mapping.io_name, error = %e, "write failed");
            let _ = self.bus.publish(TopicMessage::new(
                job.mapping.error_topic.clone(),
                IoValue::Text(format!("write failed: {e}")),
                now_us(),
            ));
        }
        debug!(
            target: "modbus",
            io = %job.mapping.io_name,
            queued_us = now_us().saturating_sub(job.received_us),
            "write done"
        );
        if let Some(reply) = job.reply {
            let _ = reply.send(result);
        }
    }

    async fn perform_write(&mut self, job: &WriteJob) -> Result<(), WriteError> {
        self.ensure_connected().await.map_err(WriteError::Transport)?;
        match self.transact(&job.request).await {
            Ok((Response::WriteAck { .. }, _)) => Ok(()),
            Ok((Response::Exception { code, .. }, _)) => {
                bump(&self.shared.stats.exceptions);
                Err(WriteError::Exception(code))
            }
            Ok((other, _)) => {
                let reason = format!("unexpected response to write: {other:?}");
                self.disconnect(&reason);
                Err(WriteError::Transport(reason))
            }
            Err(TransactError::Transport(reason)) => Err(WriteError::Transport(reason)),
            Err(TransactError::Encode(e)) => Err(WriteError::Wire(e)),
        }
    }

    /// Issues every queued write.
    async fn drain_writes(&mut self) {
        while let Ok(job) = self.writes.try_recv() {
            self.execute_write(job).await;
        }
    }

    /// Runs one poll cycle: reads every planned range in order, decodes and
    /// publishes each mapped IO. Queued writes go first, and again before
    /// each range.
    pub async fn fetch(&mut self) -> FetchReport {
        let stats = &self.shared.stats;
        bump(&stats.polls);
        let mut report = FetchReport::default();
        self.drain_writes().await;
        if let Err(reason) = self.ensure_connected().await {
            bump(&self.shared.stats.skipped_polls);
            report.transport_error = Some(reason);
            return report;
        }
        let plan = Arc::clone(&self.plan);
        for range in &plan.ranges {
            self.drain_writes().await;
            let request = Request::read(range.table, range.start, range.count);
            let outcome = match self.transact(&request).await {
                Ok((response, captured)) => self.publish_range(range, response, captured, &mut report),
                Err(TransactError::Transport(reason)) => Err(reason),
                Err(TransactError::Encode(e)) => {
                    self.publish_errors(range, &format!("cannot encode read: {e}"), now_us(), &mut report);
                    Ok(())
                }
            };
            if let Err(reason) = outcome {
                bump(&self.shared.stats.skipped_polls);
                report.transport_error = Some(reason);
                return report;
            }
        }
        bump(&self.shared.stats.completed_polls);
        report
    }

    fn publish_range(
        &mut self,
        range: &ReadRange,
        response: Response,
        captured: u64,
        report: &mut FetchReport,
    ) -> Result<(), String> {
        let count = range.count as usize;
        let bits;
        let raw = match &response {
            Response::ReadBits { packed, .. } => {
                bits = decode_bits(packed, count).map_err(|e| self.fault(format!("bit response: {e}")))?;
                RawData::Bits(&bits)
            }
            Response::ReadRegisters { words, .. } => RawData::Words(words),
            Response::Exception { code, .. } => {
                bump(&self.shared.stats.exceptions);
                let end = range.end() - 1;
                let text = format!("exception {code} reading {} {}..={end}", range.table, range.start);
                self.publish_errors(range, &text, captured, report);
                return Ok(());
            }
            Response::WriteAck { .. } => return Err(self.fault("write ack in answer to a read".into())),
        };
        let parts = range.extract(raw).map_err(|e| self.fault(format!("short response: {e}")))?;
        for (mapping, slice) in parts {
            let value = match (mapping.value_type, slice) {
                (ValueType::Bool, RawData::Bits(b)) => Ok(IoValue::Bool(b[0])),
                (ValueType::Iec(t), RawData::Words(w)) => decode_registers(t, w, self.config.word_order),
                (t, _) => Err(CodecError::TypeMismatch {
                    expected: t.to_string(),
                    actual: "raw data of another table kind".into(),
                }),
            };
            match value {
                Ok(value) => {
                    let _ = self
                        .bus
                        .publish(TopicMessage::new(mapping.read_topic.clone(), value.clone(), captured));
                    report.values.push((Arc::clone(mapping), value));
                }
                Err(e) => {
                    let text = e.to_string();
                    let _ = self.bus.publish(TopicMessage::new(
                        mapping.error_topic.clone(),
                        IoValue::Text(text.clone()),
                        captured,
                    ));
                    report.errors.push((Arc::clone(mapping), text));
                }
            }
        }
        Ok(())
    }

    fn fault(&mut self, reason: String) -> String {
        self.disconnect(&reason);
        reason
    }

    fn publish_errors(&self, range: &ReadRange, text: &str, ts: u64, report: &mut FetchReport) {
        for member in &range.members {
            let _ = self.bus.publish(TopicMessage::new(
                member.mapping.error_topic.clone(),
                IoValue::Text(text.to_string()),
                ts,
            ));
            report.errors.push((Arc::clone(&member.mapping), text.to_string()));
        }
    }

    /// Polls at the configured rate until [`DeviceHandle::shutdown`] is
    /// called. A cycle that runs past its period makes the loop skip the
    /// missed ticks instead of catching up.
    pub async fn run(mut self) {
        let period = self.config.poll_period();
        let mut ticker = interval(period);
        ticker.set_missed_tick_behavior(MissedTickBehavior::Skip);
        let mut shutdown = self.shared.shutdown.subscribe();
        loop {
            tokio::select! {
                biased;
                _ = shutdown.changed() => break,
                Some(job) = self.writes.recv() => self.execute_write(job).await,
                _ = ticker.tick() => {
                    let started = Instant::now();
                    self.fetch().await;
                    let elapsed = started.elapsed();
                    let stats = &self.shared.stats;
                    stats.last_poll_us.store(elapsed.as_micros() as u64, Ordering::Relaxed);
                    if elapsed > period {
                        bump(&stats.overruns);
                    }
                }
            }
        }
        info!(device = %self.config.name, "poll loop stopped");
    }

    /// Spawns [`Device::run`] on the current runtime.
    pub fn spawn(self) -> (DeviceHandle, tokio::task::JoinHandle<()>) {
        let handle = self.handle();
        (handle, tokio::spawn(self.run()))
    }
}

impl Drop for Device {
    fn drop(&mut self) {
        for topic in &self.sink_topics {
            self.bus.unregister_sink(topic);
        }
    }
}
