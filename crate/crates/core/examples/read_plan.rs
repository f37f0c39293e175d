//! How the gap threshold changes the number of reads per poll.

use std::sync::Arc;

use modbus_topic_gateway::codec::{IecType, ValueType};
use modbus_topic_gateway::config::IoMapping;
use modbus_topic_gateway::planner::{plan, PlannerPolicy};
use modbus_topic_gateway::wire::Table;

fn main() {
    let reg = |name: &str, offset, t| {
        Arc::new(IoMapping::new("plc", name, Table::HoldingRegister, offset, ValueType::Iec(t)))
    };
    let mut mappings = vec![
        reg("speed", 0, IecType::Real),
        reg("setpoint", 2, IecType::Real),
        reg("mode", 10, IecType::Int),
        reg("total", 40, IecType::Lreal),
        reg("label", 200, IecType::String { len: 16 }),
    ];
    for i in 0..6u16 {
        mappings.push(Arc::new(IoMapping::new("plc", &format!("sw{i}"), Table::Coil, i * 30, ValueType::Bool)));
    }
    for gap in [0, 8, 16, 64] {
        let p = plan(&mappings, &PlannerPolicy::with_max_gap(gap)).unwrap();
        println!("max gap {gap:>2}: {} reads", p.len());
        for r in &p.ranges {
            let names: Vec<_> = r.members.iter().map(|m| m.mapping.io_name.as_str()).collect();
            println!("    {:<16} {:>5} +{:<4} {}", r.table.to_string(), r.start, r.count, names.join(" "));
        }
    }
}
