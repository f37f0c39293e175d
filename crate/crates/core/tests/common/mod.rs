#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::Rng;
use tokio::io::AsyncWriteExt;
use tokio::net::TcpStream;

use modbus_topic_gateway::codec::{decode_bits, decode_registers, IecType, IoValue, ValueType, WordOrder};
use modbus_topic_gateway::config::{parse_config, ConfigFormat, DeviceConfig, IoMapping};
use modbus_topic_gateway::planner::{plan, PlannerPolicy, RawData};
use modbus_topic_gateway::sim::Simulator;
use modbus_topic_gateway::wire::{
    decode_response, encode_request, read_adu, ExceptionCode, FunctionCode, Reassembler, Request, Response, Table,
    MAX_READ_BITS, MAX_READ_REGISTERS,
};

pub const LISTING: &str = "name: device

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

/// The listing device pointed at a local port.
pub fn listing_device(port: u16, rate: f64) -> DeviceConfig {
    let mut c = parse_config(LISTING, ConfigFormat::Yaml).unwrap();
    c.address = "127.0.0.1".into();
    c.port = port;
    c.rate = rate;
    c
}

/// `n` contiguous INT input registers named r0.. starting at offset 0.
pub fn register_device(port: u16, rate: f64, n: u16) -> DeviceConfig {
    let mut c = listing_device(port, rate);
    c.name = "regs".into();
    c.mappings = (0..n)
        .map(|i| IoMapping::new("regs", &format!("r{i}"), Table::InputRegister, i, ValueType::Iec(IecType::Int)))
        .collect();
    c
}

pub fn hex(s: &str) -> Vec<u8> {
    s.split_whitespace()
        .map(|b| u8::from_str_radix(b, 16).unwrap())
        .collect()
}

// ---------------------------------------------------------------- wire

pub enum Frame {
    Request(Request),
    Response(Response),
}

pub struct Golden {
    pub name: &'static str,
    pub bytes: Vec<u8>,
    pub tid: u16,
    pub unit: u8,
    pub frame: Frame,
}

fn req(name: &'static str, bytes: &str, tid: u16, r: Request) -> Golden {
    Golden {
        name,
        bytes: hex(bytes),
        tid,
        unit: 1,
        frame: Frame::Request(r),
    }
}

fn resp(name: &'static str, bytes: &str, tid: u16, r: Response) -> Golden {
    Golden {
        name,
        bytes: hex(bytes),
        tid,
        unit: 1,
        frame: Frame::Response(r),
    }
}

fn exc(f: FunctionCode, code: u8) -> Response {
    Response::Exception {
        function: f,
        code: ExceptionCode(code),
    }
}

/// Hand-assembled ADUs. Byte layouts follow the MBAP header (tid, protocol 0,
/// length = unit + PDU) and the PDU formats of each function code.
pub fn golden_vectors() -> Vec<Golden> {
    use FunctionCode::*;
    vec![
        req("FC1 read coils 20..38", "00 01 00 00 00 06 01 01 00 13 00 13", 1,
            Request::ReadCoils { start: 0x13, count: 0x13 }),
        resp("FC1 response 3 bytes", "00 01 00 00 00 06 01 01 03 CD 6B 05", 1,
            Response::ReadBits { function: ReadCoils, packed: vec![0xCD, 0x6B, 0x05] }),
        req("FC2 read discrete 197..218", "00 02 00 00 00 06 01 02 00 C4 00 16", 2,
            Request::ReadDiscreteInputs { start: 0xC4, count: 0x16 }),
        resp("FC2 response", "00 02 00 00 00 06 01 02 03 AC DB 35", 2,
            Response::ReadBits { function: ReadDiscreteInputs, packed: vec![0xAC, 0xDB, 0x35] }),
        req("FC3 read holding 108..110", "00 03 00 00 00 06 01 03 00 6B 00 03", 3,
            Request::ReadHoldingRegisters { start: 0x6B, count: 3 }),
        resp("FC3 response", "00 03 00 00 00 09 01 03 06 02 2B 00 00 00 64", 3,
            Response::ReadRegisters { function: ReadHoldingRegisters, words: vec![0x022B, 0, 0x64] }),
        req("FC4 read LREAL at 0", "00 01 00 00 00 06 01 04 00 00 00 04", 1,
            Request::ReadInputRegisters { start: 0, count: 4 }),
        resp("FC4 response 1.0", "00 01 00 00 00 0B 01 04 08 3F F0 00 00 00 00 00 00", 1,
            Response::ReadRegisters { function: ReadInputRegisters, words: vec![0x3FF0, 0, 0, 0] }),
        req("FC5 coil 0 on", "00 05 00 00 00 06 01 05 00 00 FF 00", 5,
            Request::WriteSingleCoil { address: 0, value: true }),
        resp("FC5 echo on", "00 05 00 00 00 06 01 05 00 00 FF 00", 5,
            Response::WriteAck { function: WriteSingleCoil, address: 0, value: 0xFF00 }),
        req("FC5 coil 0 off", "00 0C 00 00 00 06 01 05 00 00 00 00", 12,
            Request::WriteSingleCoil { address: 0, value: false }),
        req("FC6 register 1 = 3", "00 06 00 00 00 06 01 06 00 01 00 03", 6,
            Request::WriteSingleRegister { address: 1, value: 3 }),
        resp("FC6 echo", "00 06 00 00 00 06 01 06 00 01 00 03", 6,
            Response::WriteAck { function: WriteSingleRegister, address: 1, value: 3 }),
        req("FC15 ten coils at 19", "00 07 00 00 00 09 01 0F 00 13 00 0A 02 CD 01", 7,
            Request::WriteMultipleCoils {
                start: 0x13,
                values: vec![true, false, true, true, false, false, true, true, true, false],
            }),
        resp("FC15 ack", "00 07 00 00 00 06 01 0F 00 13 00 0A", 7,
            Response::WriteAck { function: WriteMultipleCoils, address: 0x13, value: 10 }),
        req("FC16 two registers at 1", "00 08 00 00 00 0B 01 10 00 01 00 02 04 00 0A 01 02", 8,
            Request::WriteMultipleRegisters { start: 1, values: vec![0x000A, 0x0102] }),
        resp("FC16 ack", "00 08 00 00 00 06 01 10 00 01 00 02", 8,
            Response::WriteAck { function: WriteMultipleRegisters, address: 1, value: 2 }),
        resp("FC1 exception 1", "00 0A 00 00 00 03 01 81 01", 10, exc(ReadCoils, 1)),
        resp("FC2 exception 2", "00 0A 00 00 00 03 01 82 02", 10, exc(ReadDiscreteInputs, 2)),
        resp("FC3 exception 4", "00 0A 00 00 00 03 01 83 04", 10, exc(ReadHoldingRegisters, 4)),
        resp("FC4 exception 2", "00 09 00 00 00 03 01 84 02", 9, exc(ReadInputRegisters, 2)),
        resp("FC5 exception 3", "00 0A 00 00 00 03 01 85 03", 10, exc(WriteSingleCoil, 3)),
        resp("FC6 exception 2", "00 0A 00 00 00 03 01 86 02", 10, exc(WriteSingleRegister, 2)),
        resp("FC15 exception 3", "00 0A 00 00 00 03 01 8F 03", 10, exc(WriteMultipleCoils, 3)),
        resp("FC16 exception 3", "00 0A 00 00 00 03 01 90 03", 10, exc(WriteMultipleRegisters, 3)),
    ]
}

// ---------------------------------------------------------------- codec oracle

/// Reference encoder: IEEE/two's complement big-endian bytes, split into
/// words, reversed for low-word-first.
pub fn oracle_encode(t: IecType, v: &IoValue, order: WordOrder) -> Vec<u16> {
    let bytes: Vec<u8> = match (t, v) {
        (IecType::Byte, IoValue::BoolArray(b)) => vec![0, bits_to_int(b) as u8],
        (IecType::Word, IoValue::BoolArray(b)) => (bits_to_int(b) as u16).to_be_bytes().to_vec(),
        (IecType::Dword, IoValue::BoolArray(b)) => (bits_to_int(b) as u32).to_be_bytes().to_vec(),
        (IecType::Lword, IoValue::BoolArray(b)) => bits_to_int(b).to_be_bytes().to_vec(),
        (IecType::Sint, IoValue::Int8(x)) => vec![0, x.to_be_bytes()[0]],
        (IecType::Usint, IoValue::UInt8(x)) => vec![0, *x],
        (IecType::Char, IoValue::Char(x)) => vec![0, *x],
        (IecType::Int, IoValue::Int16(x)) => x.to_be_bytes().to_vec(),
        (IecType::Uint, IoValue::UInt16(x)) => x.to_be_bytes().to_vec(),
        (IecType::Dint, IoValue::Int32(x)) => x.to_be_bytes().to_vec(),
        (IecType::Udint, IoValue::UInt32(x)) => x.to_be_bytes().to_vec(),
        (IecType::Lint, IoValue::Int64(x)) => x.to_be_bytes().to_vec(),
        (IecType::Ulint, IoValue::UInt64(x)) => x.to_be_bytes().to_vec(),
        (IecType::Real, IoValue::Float32(x)) => x.to_be_bytes().to_vec(),
        (IecType::Lreal, IoValue::Float64(x)) => x.to_be_bytes().to_vec(),
        (IecType::String { len }, IoValue::Text(s)) => {
            let mut b: Vec<u8> = s.chars().map(|c| c as u32 as u8).collect();
            b.resize(usize::from(len.div_ceil(2)) * 2, 0);
            let words = b.chunks(2).map(|p| u16::from_be_bytes([p[0], p[1]])).collect();
            return words;
        }
        _ => panic!("oracle: {t} does not hold {v:?}"),
    };
    let mut words: Vec<u16> = bytes.chunks(2).map(|p| u16::from_be_bytes([p[0], p[1]])).collect();
    if order == WordOrder::LowWordFirst {
        words.reverse();
    }
    words
}

fn bits_to_int(bits: &[bool]) -> u64 {
    let mut v = 0u64;
    for (i, b) in bits.iter().enumerate() {
        if *b {
            v += 1u64 << i;
        }
    }
    v
}

/// A uniformly random value of the type `t` maps to.
pub fn random_value(t: IecType, rng: &mut StdRng) -> IoValue {
    let bools = |rng: &mut StdRng, n: usize| IoValue::BoolArray((0..n).map(|_| rng.gen()).collect());
    match t {
        IecType::Byte => bools(rng, 8),
        IecType::Word => bools(rng, 16),
        IecType::Dword => bools(rng, 32),
        IecType::Lword => bools(rng, 64),
        IecType::Sint => IoValue::Int8(rng.gen()),
        IecType::Int => IoValue::Int16(rng.gen()),
        IecType::Dint => IoValue::Int32(rng.gen()),
        IecType::Lint => IoValue::Int64(rng.gen()),
        IecType::Usint => IoValue::UInt8(rng.gen()),
        IecType::Uint => IoValue::UInt16(rng.gen()),
        IecType::Udint => IoValue::UInt32(rng.gen()),
        IecType::Ulint => IoValue::UInt64(rng.gen()),
        // arbitrary bit patterns, NaN payloads and signed zeros included
        IecType::Real => IoValue::Float32(f32::from_bits(rng.gen())),
        IecType::Lreal => IoValue::Float64(f64::from_bits(rng.gen())),
        IecType::Char => IoValue::Char(rng.gen()),
        IecType::String { len } => {
            let n = rng.gen_range(0..=len);
            IoValue::Text((0..n).map(|_| char::from(rng.gen_range(1u8..=255))).collect())
        }
    }
}

/// All 16 table rows, STRING with the given capacity.
pub fn all_types(string_len: u16) -> Vec<IecType> {
    let mut v = IecType::FIXED.to_vec();
    v.push(IecType::String { len: string_len });
    v
}

// ---------------------------------------------------------------- raw client

/// Bare Modbus/TCP client used as the test-side reference path.
pub struct RawClient {
    stream: TcpStream,
    reassembler: Reassembler,
    tid: u16,
}

impl RawClient {
    pub async fn connect(sim: &Simulator) -> RawClient {
        let stream = TcpStream::connect(sim.local_addr()).await.unwrap();
        stream.set_nodelay(true).unwrap();
        RawClient {
            stream,
            reassembler: Reassembler::new(),
            tid: 0,
        }
    }

    pub async fn transact(&mut self, r: &Request) -> Response {
        self.tid = self.tid.wrapping_add(1);
        let adu = encode_request(self.tid, 1, r).unwrap();
        self.stream.write_all(&adu).await.unwrap();
        let bytes = read_adu(&mut self.stream, &mut self.reassembler).await.unwrap().unwrap();
        let (h, resp) = decode_response(&bytes).unwrap();
        assert_eq!(h.transaction_id, self.tid);
        resp
    }

    pub async fn send_raw(&mut self, bytes: &[u8]) -> Option<Vec<u8>> {
        self.stream.write_all(bytes).await.unwrap();
        read_adu(&mut self.stream, &mut self.reassembler).await.ok().flatten()
    }
}

// ---------------------------------------------------------------- planner oracle

/// Random non-overlapping mappings across the four tables. Offsets cluster
/// so that gaps around the merge threshold are common.
pub fn random_mappings(rng: &mut StdRng) -> Vec<Arc<IoMapping>> {
    let mut out = Vec::new();
    let mut n = 0;
    for table in Table::ALL {
        let k = rng.gen_range(0..=12);
        let mut cursor: u32 = if rng.gen_bool(0.1) {
            rng.gen_range(65000..65400)
        } else {
            rng.gen_range(0..300)
        };
        for _ in 0..k {
            let value_type = if table.is_bit() {
                ValueType::Bool
            } else {
                let types = all_types(rng.gen_range(1..=24));
                ValueType::Iec(types[rng.gen_range(0..types.len())])
            };
            let width = match value_type {
                ValueType::Bool => 1,
                ValueType::Iec(t) => u32::from(t.register_width()),
            };
            if cursor + width > 65536 {
                break;
            }
            out.push(Arc::new(IoMapping::new("dev", &format!("io{n}"), table, cursor as u16, value_type)));
            n += 1;
            let gap = match rng.gen_range(0..4) {
                0 => 0,
                1 => rng.gen_range(0..20),
                2 => rng.gen_range(0..80),
                _ => rng.gen_range(0..400),
            };
            cursor += width + gap;
        }
    }
    out
}

pub fn random_policy(rng: &mut StdRng) -> PlannerPolicy {
    PlannerPolicy {
        max_gap_registers: rng.gen_range(0..=40),
        max_gap_bits: rng.gen_range(0..=130),
        max_read_count: if rng.gen_bool(0.3) { Some(rng.gen_range(24..=130)) } else { None },
    }
}

pub fn randomize_memory(sim: &Simulator, rng: &mut StdRng) {
    let memory = sim.memory();
    let mut m = memory.lock().unwrap();
    for table in Table::ALL {
        for region in [0u32..800, 64900..65536] {
            let words: Vec<u16> = region
                .clone()
                .map(|_| if table.is_bit() { u16::from(rng.gen::<bool>()) } else { rng.gen() })
                .collect();
            m.poke_words(table, region.start, &words).unwrap();
        }
    }
}

fn decode_one(m: &IoMapping, raw: RawData<'_>, order: WordOrder) -> IoValue {
    match (m.value_type, raw) {
        (ValueType::Bool, RawData::Bits(b)) => IoValue::Bool(b[0]),
        (ValueType::Iec(t), RawData::Words(w)) => decode_registers(t, w, order).unwrap(),
        _ => panic!("table kind mismatch"),
    }
}

fn unpack(resp: Response, count: u16) -> Result<(Vec<bool>, Vec<u16>), String> {
    match resp {
        Response::ReadBits { packed, .. } => Ok((decode_bits(&packed, count as usize).unwrap(), vec![])),
        Response::ReadRegisters { words, .. } => Ok((vec![], words)),
        other => Err(format!("unexpected response {other:?}")),
    }
}

/// One planner oracle case: planned range reads and naive per-IO reads must
/// give identical values, and every range must respect the read limits.
pub async fn planner_case(
    client: &mut RawClient,
    mappings: &[Arc<IoMapping>],
    policy: &PlannerPolicy,
    order: WordOrder,
) -> Result<usize, String> {
    let p = plan(mappings, policy).map_err(|e| e.to_string())?;
    let mut planned = BTreeMap::new();
    let mut seen = 0;
    for r in &p.ranges {
        let protocol = if r.table.is_bit() { MAX_READ_BITS } else { MAX_READ_REGISTERS };
        if r.count == 0 || r.count > protocol || r.count > policy.limit(r.table) {
            return Err(format!("range {r:?} breaks the read limit"));
        }
        if r.end() > 65536 {
            return Err(format!("range {r:?} runs past the address space"));
        }
        let (bits, words) = unpack(client.transact(&Request::read(r.table, r.start, r.count)).await, r.count)?;
        let raw = if r.table.is_bit() { RawData::Bits(&bits) } else { RawData::Words(&words) };
        for (m, slice) in r.extract(raw).map_err(|e| e.to_string())? {
            planned.insert(m.io_name.clone(), decode_one(m, slice, order));
            seen += 1;
        }
    }
    if seen != mappings.len() {
        return Err(format!("plan covers {seen} of {} mappings", mappings.len()));
    }
    for m in mappings {
        let (bits, words) = unpack(client.transact(&Request::read(m.table, m.offset, m.width)).await, m.width)?;
        let raw = if m.table.is_bit() { RawData::Bits(&bits) } else { RawData::Words(&words) };
        let naive = decode_one(m, raw, order);
        if planned.get(&m.io_name) != Some(&naive) {
            return Err(format!(
                "{} ({} @{}): planned {:?}, naive {naive:?}",
                m.io_name,
                m.table,
                m.offset,
                planned.get(&m.io_name)
            ));
        }
    }
    Ok(p.ranges.len())
}
