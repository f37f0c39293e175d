mod common;

use std::time::{Duration, Instant};

use common::{hex, RawClient};
use modbus_topic_gateway::codec::pack_bits;
use modbus_topic_gateway::sim::{load_memory, FaultPolicy, MemoryImage, SimError, Simulator, SlaveMemory};
use modbus_topic_gateway::wire::{decode_response, ExceptionCode, FunctionCode, Request, Response, Table};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

async fn sim() -> Simulator {
    Simulator::bind("127.0.0.1:0", FaultPolicy::default()).await.unwrap()
}

#[tokio::test]
async fn fresh_memory_answers_zeroes() {
    let sim = sim().await;
    let mut c = RawClient::connect(&sim).await;
    assert_eq!(
        c.transact(&Request::read(Table::InputRegister, 0, 4)).await,
        Response::ReadRegisters { function: FunctionCode::ReadInputRegisters, words: vec![0; 4] }
    );
}

#[tokio::test]
async fn read_your_write_across_connections() {
    let sim = sim().await;
    let mut a = RawClient::connect(&sim).await;
    let mut b = RawClient::connect(&sim).await;
    a.transact(&Request::WriteSingleCoil { address: 3, value: true }).await;
    assert_eq!(
        b.transact(&Request::read(Table::Coil, 0, 4)).await,
        Response::ReadBits { function: FunctionCode::ReadCoils, packed: vec![0b1000] }
    );
    b.transact(&Request::WriteMultipleRegisters { start: 100, values: vec![7, 8, 9] }).await;
    assert_eq!(
        a.transact(&Request::read(Table::HoldingRegister, 100, 3)).await,
        Response::ReadRegisters { function: FunctionCode::ReadHoldingRegisters, words: vec![7, 8, 9] }
    );
}

#[tokio::test]
async fn injected_exception() {
    let sim = sim().await;
    let mut p = FaultPolicy::default();
    p.add_exception_rule("input_register:2").unwrap();
    sim.set_policy(p);
    let mut c = RawClient::connect(&sim).await;
    let raw = c.send_raw(&hex("00 01 00 00 00 06 01 04 00 00 00 04")).await.unwrap();
    assert_eq!(&raw[7..], &[0x84, 0x02]);
    // other tables unaffected
    assert!(!c.transact(&Request::read(Table::HoldingRegister, 0, 4)).await.is_exception());
    assert_eq!(sim.log()[0].exception, Some(2));
}

#[tokio::test]
async fn illegal_requests_get_exceptions() {
    let sim = sim().await;
    let mut c = RawClient::connect(&sim).await;
    // unknown function 0x2B
    let raw = c.send_raw(&hex("00 01 00 00 00 02 01 2B")).await.unwrap();
    assert_eq!(&raw[7..], &[0xAB, 0x01]);
    // count 126 registers
    let raw = c.send_raw(&hex("00 02 00 00 00 06 01 03 00 00 00 7E")).await.unwrap();
    assert_eq!(&raw[7..], &[0x83, 0x03]);
    // start 65535 count 2
    let raw = c.send_raw(&hex("00 03 00 00 00 06 01 03 FF FF 00 02")).await.unwrap();
    assert_eq!(&raw[7..], &[0x83, 0x02]);
    // still usable
    assert!(!c.transact(&Request::read(Table::Coil, 0, 1)).await.is_exception());
}

#[tokio::test]
async fn malformed_frame_closes_the_connection() {
    let sim = sim().await;
    let mut c = RawClient::connect(&sim).await;
    // protocol id 1
    assert_eq!(c.send_raw(&hex("00 01 00 01 00 06 01 03 00 00 00 01")).await, None);
    let mut c = RawClient::connect(&sim).await;
    // FC3 with a truncated body
    assert_eq!(c.send_raw(&hex("00 01 00 00 00 04 01 03 00 00")).await, None);
}

#[tokio::test]
async fn unit_id_is_echoed() {
    let sim = sim().await;
    let mut c = RawClient::connect(&sim).await;
    let raw = c.send_raw(&hex("12 34 00 00 00 06 F7 04 00 00 00 01")).await.unwrap();
    let (h, r) = decode_response(&raw).unwrap();
    assert_eq!((h.transaction_id, h.unit_id), (0x1234, 0xF7));
    assert!(!r.is_exception());
}

#[tokio::test]
async fn latency_is_added() {
    let sim = sim().await;
    sim.set_policy(FaultPolicy { latency: Duration::from_millis(50), ..Default::default() });
    let mut c = RawClient::connect(&sim).await;
    let t = Instant::now();
    c.transact(&Request::read(Table::Coil, 0, 1)).await;
    assert!(t.elapsed() >= Duration::from_millis(50));
    let e = &sim.log()[0];
    assert!(e.responded_us - e.received_us >= 50_000);
}

#[tokio::test]
async fn responses_decode_and_log_is_monotone() {
    let sim = sim().await;
    let mut c = RawClient::connect(&sim).await;
    let mut rng = StdRng::seed_from_u64(3);
    for _ in 0..500 {
        let table = Table::ALL[rng.gen_range(0..4)];
        let max = table.max_read_count();
        let count = rng.gen_range(1..=max);
        let start = rng.gen_range(0..=(65536 - u32::from(count))) as u16;
        // RawClient::transact decodes every response with the wire module
        let r = c.transact(&Request::read(table, start, count)).await;
        assert!(!r.is_exception());
    }
    let log = sim.log();
    assert_eq!(log.len(), 500);
    for w in log.windows(2) {
        assert!(w[1].received_us >= w[0].received_us);
        assert!(w[1].responded_us >= w[0].responded_us);
        assert!(w[1].received_us >= w[0].responded_us);
    }
}

#[test]
fn load_then_read_all_matches_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mem.yaml");
    std::fs::write(
        &path,
        "coils:\n  0: [true, false, true]\ninput_registers:\n  0: [0x3FF0, 0, 0, 0]\n  65535: [7]\nholding_registers:\n  10: [1, 2]\n",
    )
    .unwrap();
    let m = load_memory(&path).unwrap();
    let mut expected = SlaveMemory::new();
    expected.poke_bits(Table::Coil, 0, &[true, false, true]).unwrap();
    expected.poke_words(Table::InputRegister, 0, &[0x3FF0, 0, 0, 0]).unwrap();
    expected.poke(Table::InputRegister, 65535, 7).unwrap();
    expected.poke_words(Table::HoldingRegister, 10, &[1, 2]).unwrap();
    assert!(m == expected);

    let mut direct = SlaveMemory::new();
    let r = direct.execute(&Request::read(Table::Coil, 0, 3));
    assert_eq!(r, Response::ReadBits { function: FunctionCode::ReadCoils, packed: pack_bits(&[false; 3]) });

    let json = dir.path().join("mem.json");
    std::fs::write(&json, r#"{"discrete_inputs": {"4": [1]}}"#).unwrap();
    assert_eq!(load_memory(&json).unwrap().peek(Table::DiscreteInput, 4).unwrap(), 1);
    assert!(MemoryImage::parse("coils:\n  65536: [true]\n", modbus_topic_gateway::ConfigFormat::Yaml)
        .map(|img| SlaveMemory::new().apply_image(&img))
        .unwrap()
        .is_err());
}

#[test]
fn poke_out_of_range() {
    let mut m = SlaveMemory::new();
    assert!(matches!(m.poke(Table::HoldingRegister, 70_000, 1), Err(SimError::OffsetOutOfRange { .. })));
}

#[test]
fn exception_code_names() {
    assert_eq!(ExceptionCode::ILLEGAL_DATA_ADDRESS.name(), "IllegalDataAddress");
}
