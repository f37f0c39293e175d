//! Parse a device file and print the resulting mappings and topics.
//!
//!     cargo run --example config_listing -- configs/device.yaml

use std::path::PathBuf;

use modbus_topic_gateway::config::{load_config, parse_config, ConfigFormat};

const EXAMPLE: &str = "name: device
address: mbdev
unit: 1
rate: 20
mapping:
  coils:
    out_Z: 1
  discrete_inputs:
    in_A: 10001
  input_registers:
    measure_v:
      address: 30001
      type: LREAL
";

fn main() -> anyhow::Result<()> {
    let config = match std::env::args_os().nth(1) {
        Some(path) => load_config(&PathBuf::from(path), None)?,
        None => parse_config(EXAMPLE, ConfigFormat::Yaml)?,
    };
    println!(
        "{} at {}:{} unit {} every {:?} ({:?})",
        config.name,
        config.address,
        config.port,
        config.unit,
        config.poll_period(),
        config.word_order
    );
    for m in &config.mappings {
        println!(
            "  {:<12} {:<16} offset {:<5} {:<8} width {}  {}  {}",
            m.io_name,
            m.table.to_string(),
            m.offset,
            m.value_type.to_string(),
            m.width,
            m.read_topic,
            m.write_topic.as_deref().unwrap_or("-"),
        );
    }
    println!("\nas JSON:\n{}", config.to_json());
    Ok(())
}
