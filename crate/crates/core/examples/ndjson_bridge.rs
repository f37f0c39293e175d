//! A full gateway with its NDJSON listener: one client subscribes, another
//! publishes a write.

use std::time::Duration;

use modbus_topic_gateway::config::{parse_config, ConfigFormat};
use modbus_topic_gateway::gateway::{Gateway, GatewayOptions};
use modbus_topic_gateway::ndjson::NdjsonClient;
use modbus_topic_gateway::sim::{FaultPolicy, Simulator};
use serde_json::json;

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let sim = Simulator::bind("127.0.0.1:0", FaultPolicy::default()).await?;
    let mut config = parse_config(include_str!("../configs/device.yaml"), ConfigFormat::Yaml)?;
    config.port = sim.local_addr().port();
    let options = GatewayOptions {
        listen: Some("127.0.0.1:0".into()),
        remaps: vec!["/device/out_Z=/gripper/close".parse().map_err(anyhow::Error::msg)?],
        ..Default::default()
    };
    let gw = Gateway::start(config, options).await?;
    let addr = gw.listen_addr().expect("listener");
    println!("gateway listening on {addr}");

    let mut watcher = NdjsonClient::connect(addr).await?;
    watcher.subscribe("/gripper/close").await?;
    let mut writer = NdjsonClient::connect(addr).await?;
    writer.publish("/gripper/close/write", json!(true)).await?;
    if let Err(e) = writer.publish("/device/in_A/write", json!(true)).await {
        println!("writing an input: {e}");
    }

    for _ in 0..6 {
        let m = watcher.next_message_timeout(Duration::from_secs(1)).await?;
        println!("{} = {} @ {}", m.topic, m.value, m.ts_us);
    }
    gw.shutdown().await;
    Ok(())
}
