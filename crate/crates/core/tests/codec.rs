mod common;

use common::{all_types, oracle_encode, random_value};
use modbus_topic_gateway::codec::{
    decode_bits, decode_registers, encode_registers, pack_bits, CodecError, IecType, IoValue, ValueType, WordOrder,
};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

const ORDERS: [WordOrder; 2] = [WordOrder::HighWordFirst, WordOrder::LowWordFirst];

#[test]
fn thousand_random_values_per_type_match_the_oracle() {
    let mut rng = StdRng::seed_from_u64(61131);
    for t in all_types(11) {
        for order in ORDERS {
            for _ in 0..1000 {
                let v = random_value(t, &mut rng);
                let words = encode_registers(t, &v, order).unwrap();
                assert_eq!(words, oracle_encode(t, &v, order), "{t} {v:?}");
                assert_eq!(decode_registers(t, &words, order).unwrap(), v, "{t}");
            }
        }
    }
}

#[test]
fn byte_against_shift_oracle() {
    for b in 0u16..=255 {
        let expected: Vec<bool> = (0..8).map(|i| (b >> i) & 1 == 1).collect();
        // high byte is ignored on decode
        for high in [0u16, 0xAB00] {
            let v = decode_registers(IecType::Byte, &[high | b], WordOrder::HighWordFirst).unwrap();
            assert_eq!(v, IoValue::BoolArray(expected.clone()));
        }
    }
}

#[test]
fn documented_examples() {
    let h = WordOrder::HighWordFirst;
    assert_eq!(decode_registers(IecType::Lreal, &[0x3FF0, 0, 0, 0], h).unwrap(), IoValue::Float64(1.0));
    assert_eq!(decode_registers(IecType::Int, &[0], h).unwrap(), IoValue::Int16(0));
    assert_eq!(
        decode_registers(IecType::Byte, &[0x0005], h).unwrap(),
        IoValue::BoolArray(vec![true, false, true, false, false, false, false, false])
    );
    assert_eq!(
        decode_registers(IecType::String { len: 4 }, &[0x4142, 0x4300], h).unwrap(),
        IoValue::Text("ABC".into())
    );
    assert_eq!(encode_registers(IecType::Int, &IoValue::Int16(-2), h).unwrap(), vec![0xFFFE]);
    for order in ORDERS {
        assert_eq!(encode_registers(IecType::Ulint, &IoValue::UInt64(0), order).unwrap(), vec![0; 4]);
    }
    assert_eq!(decode_bits(&[0x01], 1).unwrap(), vec![true]);
    assert_eq!(decode_bits(&[0x00], 8).unwrap(), vec![false; 8]);
}

#[test]
fn errors() {
    let h = WordOrder::HighWordFirst;
    assert!(matches!(
        decode_registers(IecType::Lreal, &[0, 0], h),
        Err(CodecError::WidthMismatch { expected: 4, actual: 2 })
    ));
    assert!(matches!(
        encode_registers(IecType::Real, &IoValue::Int16(1), h),
        Err(CodecError::TypeMismatch { .. })
    ));
    assert!(matches!(
        encode_registers(IecType::String { len: 2 }, &IoValue::Text("abc".into()), h),
        Err(CodecError::TextTooLong { capacity: 2, actual: 3 })
    ));
    assert!(decode_bits(&[0, 0], 8).is_err());
}

#[test]
fn json_typing_follows_the_mapping_type() {
    let v = IoValue::from_json(&serde_json::json!(1.5), ValueType::Iec(IecType::Lreal)).unwrap();
    assert_eq!(v, IoValue::Float64(1.5));
    let v = IoValue::from_json(&serde_json::json!("18446744073709551615"), ValueType::Iec(IecType::Ulint)).unwrap();
    assert_eq!(v.to_json(), serde_json::json!("18446744073709551615"));
    assert!(IoValue::from_json(&serde_json::json!(300), ValueType::Iec(IecType::Usint)).is_err());
    assert!(IoValue::from_json(&serde_json::json!(1), ValueType::Bool).is_err());
}

fn arb_type() -> impl Strategy<Value = IecType> {
    prop_oneof![
        prop::sample::select(IecType::FIXED.to_vec()),
        (1u16..=64).prop_map(|len| IecType::String { len }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn decode_is_total(t in arb_type(), seed in any::<u64>(), low_first in any::<bool>()) {
        let order = if low_first { WordOrder::LowWordFirst } else { WordOrder::HighWordFirst };
        let mut x = seed;
        let words: Vec<u16> = (0..t.register_width())
            .map(|_| { x = x.wrapping_mul(6364136223846793005).wrapping_add(1); (x >> 48) as u16 })
            .collect();
        let v = decode_registers(t, &words, order).unwrap();
        // canonical re-encoding decodes to the same value
        let again = encode_registers(t, &v, order).unwrap();
        prop_assert_eq!(decode_registers(t, &again, order).unwrap(), v);
    }

    #[test]
    fn word_order_reversal(t in prop::sample::select(IecType::FIXED.to_vec()), seed in any::<u64>()) {
        let mut rng = <StdRng as SeedableRng>::seed_from_u64(seed);
        let v = random_value(t, &mut rng);
        let mut high = encode_registers(t, &v, WordOrder::HighWordFirst).unwrap();
        high.reverse();
        prop_assert_eq!(high, encode_registers(t, &v, WordOrder::LowWordFirst).unwrap());
    }

    #[test]
    fn bit_packing_round_trip(bits in prop::collection::vec(any::<bool>(), 0..=2000)) {
        let packed = pack_bits(&bits);
        prop_assert_eq!(packed.len(), bits.len().div_ceil(8));
        prop_assert_eq!(decode_bits(&packed, bits.len()).unwrap(), bits);
    }
}
