//! In-process latency benchmark: simulator and gateway on loopback.
//!
//! Read scenarios measure, per poll, the time from the simulator writing the
//! response to the first message of that poll reaching the bus (`dt0`) and
//! the gaps between the messages of one poll (`dtp`, only with more than one
//! IO). Write scenarios publish over the NDJSON listener and measure from
//! the line being received to the simulator reading the write request
//! (`write_dt0`).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tokio::time::{interval, MissedTickBehavior};

use crate::bus::{Bus, BusError, Delivered};
use crate::codec::{IecType, ValueType, WordOrder};
use crate::config::{DeviceConfig, IoMapping};
use crate::device::DeviceOptions;
use crate::gateway::{Gateway, GatewayError, GatewayOptions};
use crate::ndjson::{ClientError, NdjsonClient};
use crate::sim::{FaultPolicy, RequestLogEntry, Simulator};
use crate::wire::{FunctionCode, Table};

/// Allowed deviation of the sample count from the expected count.
pub const SAMPLE_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    ReadDiscrete,
    ReadInputRegister,
    WriteCoil,
    WriteHolding,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::ReadDiscrete,
        ScenarioKind::ReadInputRegister,
        ScenarioKind::WriteCoil,
        ScenarioKind::WriteHolding,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::ReadDiscrete => "read_discrete",
            ScenarioKind::ReadInputRegister => "read_input_register",
            ScenarioKind::WriteCoil => "write_coil",
            ScenarioKind::WriteHolding => "write_holding",
        }
    }

    pub fn table(self) -> Table {
        match self {
            ScenarioKind::ReadDiscrete => Table::DiscreteInput,
            ScenarioKind::ReadInputRegister => Table::InputRegister,
            ScenarioKind::WriteCoil => Table::Coil,
            ScenarioKind::WriteHolding => Table::HoldingRegister,
        }
    }

    pub fn is_write(self) -> bool {
        matches!(self, ScenarioKind::WriteCoil | ScenarioKind::WriteHolding)
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown scenario '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchScenario {
    pub kind: ScenarioKind,
    pub io_count: u16,
    /// Hz.
    pub rate: f64,
    /// Seconds.
    pub duration: f64,
}

impl BenchScenario {
    /// Polls or writes the scenario should produce.
    pub fn expected_samples(&self) -> u64 {
        (self.rate * self.duration).round() as u64
    }

    /// The device the gateway polls: `io_count` consecutive IOs in the
    /// scenario's table, named `io0`, `io1`, ...
    pub fn device_config(&self, port: u16) -> DeviceConfig {
        let table = self.kind.table();
        let value_type = if table.is_bit() {
            ValueType::Bool
        } else {
            ValueType::Iec(IecType::Int)
        };
        DeviceConfig {
            name: "bench".into(),
            address: "127.0.0.1".into(),
            port,
            unit: 1,
            rate: self.rate,
            word_order: WordOrder::default(),
            max_gap: None,
            max_read_count: None,
            mappings: (0..self.io_count)
                .map(|i| IoMapping::new("bench", &format!("io{i}"), table, i, value_type))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub mean_us: f64,
    pub sigma_us: f64,
    pub n: u64,
}

impl Metric {
    /// Mean and sample standard deviation.
    pub fn from_samples(samples: &[f64]) -> Metric {
        let n = samples.len();
        if n == 0 {
            return Metric::default();
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Metric {
            mean_us: mean,
            sigma_us: var.sqrt(),
            n: n as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub scenario: BenchScenario,
    pub metrics: BTreeMap<String, Metric>,
    pub expected_samples: u64,
    pub samples: u64,
    pub dropped_messages: u64,
    pub overruns: u64,
    pub skipped_polls: u64,
}

impl BenchReport {
    pub fn metric(&self, name: &str) -> Option<&Metric> {
        self.metrics.get(name)
    }

    pub fn within_tolerance(&self) -> bool {
        let allowed = (self.expected_samples as f64 * SAMPLE_TOLERANCE).max(1.0);
        (self.samples as f64 - self.expected_samples as f64).abs() <= allowed
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("expected {} samples, got {}", .0.expected_samples, .0.samples)]
    ScenarioUnderrun(Box<BenchReport>),
    #[error("io_count must be at least 1")]
    NoIo,
    #[error("rate and duration must be positive")]
    InvalidTiming,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Bus(#[from] BusError),
}

/// Runs one scenario against a fresh simulator and gateway.
pub async fn run_scenario(scenario: &BenchScenario) -> Result<BenchReport, BenchError> {
    if scenario.io_count == 0 {
        return Err(BenchError::NoIo);
    }
    if !(scenario.rate > 0.0 && scenario.duration > 0.0) {
        return Err(BenchError::InvalidTiming);
    }
    let sim = Simulator::bind("127.0.0.1:0", FaultPolicy::default()).await?;
    let config = scenario.device_config(sim.local_addr().port());
    let options = GatewayOptions {
        listen: Some("127.0.0.1:0".into()),
        device: DeviceOptions::for_config(&config),
        ..Default::default()
    };
    let bus = Bus::default();
    // room for every message of the run, so nothing is dropped
    let depth = (scenario.expected_samples() as usize + 1) * (usize::from(scenario.io_count) + 1) + 64;
    let sub = bus.subscribe_with_depth("/bench/*", depth)?;
    let gateway = Gateway::start_on(bus, config, options).await?;
    let period = Duration::from_secs_f64(1.0 / scenario.rate);
    let run_for = Duration::from_secs_f64(scenario.duration);

    if scenario.kind.is_write() {
        let addr = gateway.listen_addr().expect("listener is configured");
        let mut client = NdjsonClient::connect(addr).await?;
        let mut ticker = interval(period);
        ticker.set_missed_tick_behavior(MissedTickBehavior::Skip);
        for i in 0..scenario.expected_samples() {
            ticker.tick().await;
            let io = i % u64::from(scenario.io_count);
            let value = match scenario.kind {
                ScenarioKind::WriteCoil => json!(i % 2 == 0),
                _ => json!(i % 1000),
            };
            client.publish(&format!("/bench/io{io}/write"), value).await?;
        }
        // let the last write reach the slave
        tokio::time::sleep(period.min(Duration::from_millis(200))).await;
    } else {
        tokio::time::sleep(run_for).await;
    }
    let stats = gateway.device().stats();
    gateway.shutdown().await;

    let mut delivered: Vec<Delivered> = Vec::new();
    while let Some(d) = sub.try_recv_delivered() {
        delivered.push(d);
    }
    let log = sim.log();
    let mut metrics = BTreeMap::new();
    let samples;
    if scenario.kind.is_write() {
        let write_ts: Vec<u64> = delivered
            .iter()
            .filter(|d| d.message.topic.ends_with("/write"))
            .map(|d| d.message.ts_us)
            .collect();
        let seen: Vec<&RequestLogEntry> = log.iter().filter(|e| is_write_fc(e.function)).collect();
        let dts: Vec<f64> = write_ts
            .iter()
            .zip(&seen)
            .map(|(ts, e)| e.received_us as f64 - *ts as f64)
            .collect();
        samples = dts.len() as u64;
        metrics.insert("write_dt0".to_string(), Metric::from_samples(&dts));
    } else {
        let read_fc = scenario.kind.table().read_function().value();
        let responses: Vec<u64> = log
            .iter()
            .filter(|e| e.function == read_fc && e.exception.is_none())
            .map(|e| e.responded_us)
            .collect();
        let (dt0, dtp) = read_latencies(&delivered, &responses);
        samples = dt0.len() as u64;
        metrics.insert("dt0".to_string(), Metric::from_samples(&dt0));
        if scenario.io_count > 1 {
            metrics.insert("dtp".to_string(), Metric::from_samples(&dtp));
        }
    }
    sim.shutdown();

    let report = BenchReport {
        scenario: scenario.clone(),
        metrics,
        expected_samples: scenario.expected_samples(),
        samples,
        dropped_messages: sub.dropped(),
        overruns: stats.overruns,
        skipped_polls: stats.skipped_polls,
    };
    if report.within_tolerance() {
        Ok(report)
    } else {
        Err(BenchError::ScenarioUnderrun(Box::new(report)))
    }
}

fn is_write_fc(function: u8) -> bool {
    matches!(
        FunctionCode::try_from(function),
        Ok(FunctionCode::WriteSingleCoil
            | FunctionCode::WriteSingleRegister
            | FunctionCode::WriteMultipleCoils
            | FunctionCode::WriteMultipleRegisters)
    )
}

/// Groups read messages into polls by their shared capture timestamp and
/// pairs each poll with the latest response sent before it was captured.
/// Returns per-poll `dt0` and all within-poll gaps.
pub fn read_latencies(delivered: &[Delivered], responded_us: &[u64]) -> (Vec<f64>, Vec<f64>) {
    let mut polls: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for d in delivered {
        polls.entry(d.message.ts_us).or_default().push(d.published_us);
    }
    let mut dt0 = Vec::new();
    let mut dtp = Vec::new();
    for (captured, mut published) in polls {
        let idx = responded_us.partition_point(|&r| r <= captured);
        if idx == 0 {
            continue;
        }
        published.sort_unstable();
        dt0.push(published[0] as f64 - responded_us[idx - 1] as f64);
        dtp.extend(published.windows(2).map(|w| (w[1] - w[0]) as f64));
    }
    (dt0, dtp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::TopicMessage;
    use crate::codec::IoValue;

    #[test]
    fn metric_stats() {
        let m = Metric::from_samples(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m.mean_us, 5.0);
        assert!((m.sigma_us - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(m.n, 8);
        assert_eq!(Metric::from_samples(&[]).n, 0);
    }

    #[test]
    fn poll_grouping() {
        let d = |ts, published_us| Delivered {
            message: TopicMessage::new("/bench/io0", IoValue::Int16(0), ts),
            published_us,
        };
        let delivered = vec![d(110, 120), d(110, 125), d(110, 131), d(210, 230)];
        let (dt0, dtp) = read_latencies(&delivered, &[100, 200]);
        assert_eq!(dt0, vec![20.0, 30.0]);
        assert_eq!(dtp, vec![5.0, 6.0]);
    }

    #[test]
    fn tolerance() {
        let s = BenchScenario {
            kind: ScenarioKind::ReadDiscrete,
            io_count: 1,
            rate: 10.0,
            duration: 100.0,
        };
        let mut r = BenchReport {
            expected_samples: s.expected_samples(),
            scenario: s,
            metrics: BTreeMap::new(),
            samples: 990,
            dropped_messages: 0,
            overruns: 0,
            skipped_polls: 0,
        };
        assert!(r.within_tolerance());
        r.samples = 989;
        assert!(!r.within_tolerance());
    }

    #[test]
    fn scenario_names() {
        for k in ScenarioKind::ALL {
            assert_eq!(k.as_str().parse::<ScenarioKind>().unwrap(), k);
        }
    }
}
