//! Encode a few Modbus/TCP requests, answer them from an in-memory slave and
//! decode the replies.

use modbus_topic_gateway::sim::SlaveMemory;
use modbus_topic_gateway::wire::{decode_request, decode_response, encode_request, encode_response, Request, Table};

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02X}")).collect::<Vec<_>>().join(" ")
}

fn main() {
    let mut slave = SlaveMemory::new();
    let requests = [
        Request::WriteSingleCoil { address: 0, value: true },
        Request::WriteMultipleRegisters { start: 0, values: vec![0x3FF0, 0, 0, 0] },
        Request::read(Table::Coil, 0, 8),
        Request::read(Table::HoldingRegister, 0, 4),
        // one past the end of the address space
        Request::read(Table::InputRegister, 65535, 2),
    ];
    for (tid, request) in (1u16..).zip(requests) {
        let adu = match encode_request(tid, 1, &request) {
            Ok(adu) => adu,
            Err(e) => {
                println!("{request:?}: refused locally: {e}");
                continue;
            }
        };
        let (_, decoded) = decode_request(&adu).unwrap();
        let reply = encode_response(tid, 1, &slave.execute(&decoded));
        let (header, response) = decode_response(&reply).unwrap();
        println!("-> {}", hex(&adu));
        println!("<- {}  tid {} {response:?}", hex(&reply), header.transaction_id);
    }
}
