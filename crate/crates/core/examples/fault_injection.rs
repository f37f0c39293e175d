//! Exceptions on one table leave the others alone; a slave restart is
//! picked up by the reconnect backoff.

use std::time::{Duration, Instant};

use modbus_topic_gateway::bus::Bus;
use modbus_topic_gateway::config::{parse_config, ConfigFormat};
use modbus_topic_gateway::device::{Device, DeviceOptions};
use modbus_topic_gateway::sim::{FaultPolicy, Simulator};

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let mut policy = FaultPolicy::default();
    policy.add_exception_rule("input_register:2")?;
    let sim = Simulator::bind("127.0.0.1:0", policy).await?;
    let addr = sim.local_addr().to_string();
    let memory = sim.memory();

    let mut config = parse_config(include_str!("../configs/device.yaml"), ConfigFormat::Yaml)?;
    config.port = sim.local_addr().port();
    let bus = Bus::default();
    let sub = bus.subscribe("/*")?;
    let (handle, task) = Device::new(config, DeviceOptions::default(), bus)?.spawn();

    tokio::time::sleep(Duration::from_millis(120)).await;
    while let Some(m) = sub.try_recv() {
        println!("{}", m.to_json());
    }

    println!("-- stopping the slave");
    sim.shutdown();
    tokio::time::sleep(Duration::from_millis(600)).await;
    while sub.try_recv().is_some() {}
    let _sim = Simulator::bind_with_memory(&addr, memory, FaultPolicy::default()).await?;
    let restarted = Instant::now();
    let m = sub.recv_timeout(Duration::from_secs(10)).await.expect("gateway reconnects");
    println!("-- first message {:?} after restart: {}", restarted.elapsed(), m.to_json());
    println!("{}", serde_json::to_string_pretty(&handle.stats())?);
    handle.shutdown();
    task.await?;
    Ok(())
}
