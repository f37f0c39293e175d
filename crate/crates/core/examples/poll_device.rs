//! Poll a simulated slave and watch values change on the topic bus, then
//! write an output through the device handle.

use std::time::Duration;

use modbus_topic_gateway::bus::Bus;
use modbus_topic_gateway::codec::{encode_registers, IecType, IoValue, WordOrder};
use modbus_topic_gateway::config::{parse_config, ConfigFormat};
use modbus_topic_gateway::device::{Device, DeviceOptions};
use modbus_topic_gateway::sim::{FaultPolicy, Simulator};
use modbus_topic_gateway::wire::Table;

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let sim = Simulator::bind("127.0.0.1:0", FaultPolicy::default()).await?;
    let mut config = parse_config(include_str!("../configs/device.yaml"), ConfigFormat::Yaml)?;
    config.port = sim.local_addr().port();
    config.rate = 5.0;

    let bus = Bus::default();
    let sub = bus.subscribe("/device/*")?;
    let (handle, task) = Device::new(config, DeviceOptions::default(), bus)?.spawn();

    for step in 0..5 {
        let words = encode_registers(IecType::Lreal, &IoValue::Float64(step as f64 * 0.25), WordOrder::HighWordFirst)?;
        sim.memory().lock().unwrap().poke_words(Table::InputRegister, 0, &words)?;
        sim.poke(Table::DiscreteInput, 0, (step % 2) as u16)?;
        tokio::time::sleep(Duration::from_millis(200)).await;
        while let Some(m) = sub.try_recv() {
            println!("{}", m.to_json());
        }
    }

    handle.write("out_Z", IoValue::Bool(true)).await?;
    println!("coil 0 is now {}", sim.memory().lock().unwrap().peek(Table::Coil, 0)?);
    println!("{}", serde_json::to_string_pretty(&handle.stats())?);
    handle.shutdown();
    task.await?;
    Ok(())
}
