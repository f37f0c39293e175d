//! Every supported IEC 61131-3 type, encoded in both word orders.

use modbus_topic_gateway::codec::{decode_registers, encode_registers, IecType, IoValue, WordOrder};

fn main() {
    let samples = [
        (IecType::Byte, IoValue::BoolArray(vec![true, false, true, false, false, false, false, false])),
        (IecType::Word, IoValue::BoolArray((0..16).map(|i| i % 3 == 0).collect())),
        (IecType::Dword, IoValue::BoolArray((0..32).map(|i| i < 4).collect())),
        (IecType::Lword, IoValue::BoolArray((0..64).map(|i| i == 63).collect())),
        (IecType::Sint, IoValue::Int8(-5)),
        (IecType::Int, IoValue::Int16(-2)),
        (IecType::Dint, IoValue::Int32(-70_000)),
        (IecType::Lint, IoValue::Int64(i64::MIN)),
        (IecType::Usint, IoValue::UInt8(200)),
        (IecType::Uint, IoValue::UInt16(65_000)),
        (IecType::Udint, IoValue::UInt32(0xDEAD_BEEF)),
        (IecType::Ulint, IoValue::UInt64(1 << 40)),
        (IecType::Real, IoValue::Float32(1.5)),
        (IecType::Lreal, IoValue::Float64(1.0)),
        (IecType::Char, IoValue::Char(b'A')),
        (IecType::String { len: 6 }, IoValue::Text("Grüße".into())),
    ];
    for (t, v) in samples {
        let high = encode_registers(t, &v, WordOrder::HighWordFirst).unwrap();
        let low = encode_registers(t, &v, WordOrder::LowWordFirst).unwrap();
        assert_eq!(decode_registers(t, &high, WordOrder::HighWordFirst).unwrap(), v);
        println!("{:<10} {:<40} high {:04X?}  low {:04X?}", t.to_string(), v.to_json().to_string(), high, low);
    }
}
