//! Loopback latency of each scenario at a short duration.
//!
//!     cargo run --release --example latency_bench -- 10

use modbus_topic_gateway::bench::{run_scenario, BenchScenario, ScenarioKind};

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let duration: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(2.0);
    for kind in ScenarioKind::ALL {
        let io_count = if kind.is_write() { 1 } else { 32 };
        let scenario = BenchScenario { kind, io_count, rate: 10.0, duration };
        let report = run_scenario(&scenario).await?;
        for (name, m) in &report.metrics {
            println!("{:<20} {name:<10} mean {:>8.1} us  sd {:>8.1} us  n {}", kind.as_str(), m.mean_us, m.sigma_us, m.n);
        }
    }
    Ok(())
}
