//! Modbus/TCP framing.
//!
//! An ADU is the 7-byte MBAP header (transaction id, protocol id, length,
//! unit id) followed by the PDU (function code + payload). All multi-byte
//! fields are big-endian. Only the eight data-access function codes the
//! gateway needs are supported:
//!
//! | Code | Function                 |
//! |------|--------------------------|
//! | 0x01 | Read Coils               |
//! | 0x02 | Read Discrete Inputs     |
//! | 0x03 | Read Holding Registers   |
//! | 0x04 | Read Input Registers     |
//! | 0x05 | Write Single Coil        |
//! | 0x06 | Write Single Register    |
//! | 0x0F | Write Multiple Coils     |
//! | 0x10 | Write Multiple Registers |
//!
//! Everything in here is a pure function of its input. Transaction ids are
//! opaque to the codec; the device client assigns them.

use std::fmt;
use std::io;

use bytes::{Buf, BytesMut};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::io::{AsyncRead, AsyncReadExt};

use crate::codec::pack_bits;

/// Size of the MBAP header including the unit id.
pub const MBAP_HEADER_LEN: usize = 7;
/// Largest PDU allowed by the protocol.
pub const MAX_PDU_LEN: usize = 253;
/// Largest value the MBAP length field may carry (unit id + PDU).
pub const MAX_MBAP_LENGTH: u16 = 1 + MAX_PDU_LEN as u16;

pub const MAX_READ_BITS: u16 = 2000;
pub const MAX_READ_REGISTERS: u16 = 125;
pub const MAX_WRITE_COILS: u16 = 1968;
pub const MAX_WRITE_REGISTERS: u16 = 123;

/// Size of each of the four address tables.
pub const ADDRESS_SPACE: u32 = 65536;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("count {count} out of range for function code {function}")]
    CountOutOfRange { function: u8, count: usize },
    #[error("start address {start} plus count {count} exceeds the address space")]
    AddressOverflow { start: u16, count: usize },
    #[error("write payload is empty")]
    EmptyPayload,
    #[error("table {0} is read-only")]
    ReadOnlyTable(Table),
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("unknown function code {0:#04x}")]
    UnknownFunction(u8),
}

fn malformed(msg: impl Into<String>) -> WireError {
    WireError::MalformedFrame(msg.into())
}

/// The four tables of the Modbus data model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Table {
    Coil,
    DiscreteInput,
    InputRegister,
    HoldingRegister,
}

impl Table {
    pub const ALL: [Table; 4] = [
        Table::Coil,
        Table::DiscreteInput,
        Table::InputRegister,
        Table::HoldingRegister,
    ];

    /// Single-bit tables (coils, discrete inputs).
    pub fn is_bit(self) -> bool {
        matches!(self, Table::Coil | Table::DiscreteInput)
    }

    /// Tables the master may write to.
    pub fn is_output(self) -> bool {
        matches!(self, Table::Coil | Table::HoldingRegister)
    }

    pub fn read_function(self) -> FunctionCode {
        match self {
            Table::Coil => FunctionCode::ReadCoils,
            Table::DiscreteInput => FunctionCode::ReadDiscreteInputs,
            Table::HoldingRegister => FunctionCode::ReadHoldingRegisters,
            Table::InputRegister => FunctionCode::ReadInputRegisters,
        }
    }

    /// Largest number of items one read request may cover.
    pub fn max_read_count(self) -> u16 {
        if self.is_bit() {
            MAX_READ_BITS
        } else {
            MAX_READ_REGISTERS
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Table::Coil => "coil",
            Table::DiscreteInput => "discrete_input",
            Table::InputRegister => "input_register",
            Table::HoldingRegister => "holding_register",
        }
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Table {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "coil" | "coils" => Ok(Table::Coil),
            "discrete_input" | "discrete_inputs" => Ok(Table::DiscreteInput),
            "input_register" | "input_registers" => Ok(Table::InputRegister),
            "holding_register" | "holding_registers" => Ok(Table::HoldingRegister),
            other => Err(format!("unknown table '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FunctionCode {
    ReadCoils = 0x01,
    ReadDiscreteInputs = 0x02,
    ReadHoldingRegisters = 0x03,
    ReadInputRegisters = 0x04,
    WriteSingleCoil = 0x05,
    WriteSingleRegister = 0x06,
    WriteMultipleCoils = 0x0F,
    WriteMultipleRegisters = 0x10,
}

impl FunctionCode {
    pub fn value(self) -> u8 {
        self as u8
    }

    /// Table a function code addresses.
    pub fn table(self) -> Table {
        match self {
            FunctionCode::ReadCoils
            | FunctionCode::WriteSingleCoil
            | FunctionCode::WriteMultipleCoils => Table::Coil,
            FunctionCode::ReadDiscreteInputs => Table::DiscreteInput,
            FunctionCode::ReadInputRegisters => Table::InputRegister,
            FunctionCode::ReadHoldingRegisters
            | FunctionCode::WriteSingleRegister
            | FunctionCode::WriteMultipleRegisters => Table::HoldingRegister,
        }
    }
}

impl TryFrom<u8> for FunctionCode {
    type Error = WireError;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Ok(match value {
            0x01 => FunctionCode::ReadCoils,
            0x02 => FunctionCode::ReadDiscreteInputs,
            0x03 => FunctionCode::ReadHoldingRegisters,
            0x04 => FunctionCode::ReadInputRegisters,
            0x05 => FunctionCode::WriteSingleCoil,
            0x06 => FunctionCode::WriteSingleRegister,
            0x0F => FunctionCode::WriteMultipleCoils,
            0x10 => FunctionCode::WriteMultipleRegisters,
            other => return Err(WireError::UnknownFunction(other)),
        })
    }
}

impl fmt::Display for FunctionCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FC{}", self.value())
    }
}

/// Exception code carried by an exception response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExceptionCode(pub u8);

impl ExceptionCode {
    pub const ILLEGAL_FUNCTION: ExceptionCode = ExceptionCode(0x01);
    pub const ILLEGAL_DATA_ADDRESS: ExceptionCode = ExceptionCode(0x02);
    pub const ILLEGAL_DATA_VALUE: ExceptionCode = ExceptionCode(0x03);
    pub const SERVER_DEVICE_FAILURE: ExceptionCode = ExceptionCode(0x04);
    pub const ACKNOWLEDGE: ExceptionCode = ExceptionCode(0x05);
    pub const SERVER_DEVICE_BUSY: ExceptionCode = ExceptionCode(0x06);
    pub const GATEWAY_PATH_UNAVAILABLE: ExceptionCode = ExceptionCode(0x0A);
    pub const GATEWAY_TARGET_FAILED: ExceptionCode = ExceptionCode(0x0B);

    pub fn name(self) -> &'static str {
        match self.0 {
            0x01 => "IllegalFunction",
            0x02 => "IllegalDataAddress",
            0x03 => "IllegalDataValue",
            0x04 => "ServerDeviceFailure",
            0x05 => "Acknowledge",
            0x06 => "ServerDeviceBusy",
            0x08 => "MemoryParityError",
            0x0A => "GatewayPathUnavailable",
            0x0B => "GatewayTargetFailedToRespond",
            _ => "Unknown",
        }
    }
}

impl fmt::Display for ExceptionCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.0, self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MbapHeader {
    pub transaction_id: u16,
    pub protocol_id: u16,
    /// Byte count of the unit id plus the PDU.
    pub length: u16,
    pub unit_id: u8,
}

impl MbapHeader {
    pub fn for_pdu(transaction_id: u16, unit_id: u8, pdu_len: usize) -> Self {
        MbapHeader {
            transaction_id,
            protocol_id: 0,
            length: (pdu_len + 1) as u16,
            unit_id,
        }
    }

    fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.transaction_id.to_be_bytes());
        out.extend_from_slice(&self.protocol_id.to_be_bytes());
        out.extend_from_slice(&self.length.to_be_bytes());
        out.push(self.unit_id);
    }

    /// Parses the first seven bytes of `bytes`.
    pub fn parse(bytes: &[u8]) -> Result<Self, WireError> {
        if bytes.len() < MBAP_HEADER_LEN {
            return Err(malformed(format!(
                "{} bytes is shorter than an MBAP header",
                bytes.len()
            )));
        }
        let header = MbapHeader {
            transaction_id: u16::from_be_bytes([bytes[0], bytes[1]]),
            protocol_id: u16::from_be_bytes([bytes[2], bytes[3]]),
            length: u16::from_be_bytes([bytes[4], bytes[5]]),
            unit_id: bytes[6],
        };
        if header.protocol_id != 0 {
            return Err(malformed(format!(
                "protocol id {} is not Modbus",
                header.protocol_id
            )));
        }
        Ok(header)
    }
}

/// Payload of a write to an output table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WritePayload {
    Bits(Vec<bool>),
    Words(Vec<u16>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    ReadCoils { start: u16, count: u16 },
    ReadDiscreteInputs { start: u16, count: u16 },
    ReadHoldingRegisters { start: u16, count: u16 },
    ReadInputRegisters { start: u16, count: u16 },
    WriteSingleCoil { address: u16, value: bool },
    WriteSingleRegister { address: u16, value: u16 },
    WriteMultipleCoils { start: u16, values: Vec<bool> },
    WriteMultipleRegisters { start: u16, values: Vec<u16> },
}

fn check_window(function: FunctionCode, start: u16, count: usize, max: u16) -> Result<(), WireError> {
    if count == 0 || count > max as usize {
        return Err(WireError::CountOutOfRange {
            function: function.value(),
            count,
        });
    }
    if start as u32 + count as u32 > ADDRESS_SPACE {
        return Err(WireError::AddressOverflow { start, count });
    }
    Ok(())
}

impl Request {
    /// Read request for `count` items of `table` starting at `start`.
    pub fn read(table: Table, start: u16, count: u16) -> Request {
        match table {
            Table::Coil => Request::ReadCoils { start, count },
            Table::DiscreteInput => Request::ReadDiscreteInputs { start, count },
            Table::InputRegister => Request::ReadInputRegisters { start, count },
            Table::HoldingRegister => Request::ReadHoldingRegisters { start, count },
        }
    }

    /// Picks the write function code for a payload: FC5 for a single coil,
    /// FC6 for a single register, FC15/FC16 otherwise.
    pub fn write(table: Table, offset: u16, payload: WritePayload) -> Result<Request, WireError> {
        let request = match (table, payload) {
            (Table::Coil, WritePayload::Bits(bits)) => match bits.len() {
                0 => return Err(WireError::EmptyPayload),
                1 => Request::WriteSingleCoil {
                    address: offset,
                    value: bits[0],
                },
                _ => Request::WriteMultipleCoils {
                    start: offset,
                    values: bits,
                },
            },
            (Table::HoldingRegister, WritePayload::Words(words)) => match words.len() {
                0 => return Err(WireError::EmptyPayload),
                1 => Request::WriteSingleRegister {
                    address: offset,
                    value: words[0],
                },
                _ => Request::WriteMultipleRegisters {
                    start: offset,
                    values: words,
                },
            },
            (Table::Coil, WritePayload::Words(_)) | (Table::HoldingRegister, WritePayload::Bits(_)) => {
                return Err(malformed(format!("payload kind does not match table {table}")))
            }
            (table, _) => return Err(WireError::ReadOnlyTable(table)),
        };
        request.validate()?;
        Ok(request)
    }

    pub fn function_code(&self) -> FunctionCode {
        match self {
            Request::ReadCoils { .. } => FunctionCode::ReadCoils,
            Request::ReadDiscreteInputs { .. } => FunctionCode::ReadDiscreteInputs,
            Request::ReadHoldingRegisters { .. } => FunctionCode::ReadHoldingRegisters,
            Request::ReadInputRegisters { .. } => FunctionCode::ReadInputRegisters,
            Request::WriteSingleCoil { .. } => FunctionCode::WriteSingleCoil,
            Request::WriteSingleRegister { .. } => FunctionCode::WriteSingleRegister,
            Request::WriteMultipleCoils { .. } => FunctionCode::WriteMultipleCoils,
            Request::WriteMultipleRegisters { .. } => FunctionCode::WriteMultipleRegisters,
        }
    }

    /// First address and number of items touched by the request.
    pub fn window(&self) -> (u16, usize) {
        match self {
            Request::ReadCoils { start, count }
            | Request::ReadDiscreteInputs { start, count }
            | Request::ReadHoldingRegisters { start, count }
            | Request::ReadInputRegisters { start, count } => (*start, *count as usize),
            Request::WriteSingleCoil { address, .. } | Request::WriteSingleRegister { address, .. } => {
                (*address, 1)
            }
            Request::WriteMultipleCoils { start, values } => (*start, values.len()),
            Request::WriteMultipleRegisters { start, values } => (*start, values.len()),
        }
    }

    /// Checks protocol count limits and address-space bounds.
    pub fn validate(&self) -> Result<(), WireError> {
        let fc = self.function_code();
        let (start, count) = self.window();
        let max = match self {
            Request::ReadCoils { .. } | Request::ReadDiscreteInputs { .. } => MAX_READ_BITS,
            Request::ReadHoldingRegisters { .. } | Request::ReadInputRegisters { .. } => {
                MAX_READ_REGISTERS
            }
            Request::WriteSingleCoil { .. } | Request::WriteSingleRegister { .. } => 1,
            Request::WriteMultipleCoils { .. } => MAX_WRITE_COILS,
            Request::WriteMultipleRegisters { .. } => MAX_WRITE_REGISTERS,
        };
        check_window(fc, start, count, max)
    }

    pub fn encode_pdu(&self) -> Result<Vec<u8>, WireError> {
        self.validate()?;
        let mut pdu = Vec::with_capacity(8);
        pdu.push(self.function_code().value());
        match self {
            Request::ReadCoils { start, count }
            | Request::ReadDiscreteInputs { start, count }
            | Request::ReadHoldingRegisters { start, count }
            | Request::ReadInputRegisters { start, count } => {
                pdu.extend_from_slice(&start.to_be_bytes());
                pdu.extend_from_slice(&count.to_be_bytes());
            }
            Request::WriteSingleCoil { address, value } => {
                pdu.extend_from_slice(&address.to_be_bytes());
                pdu.extend_from_slice(&coil_word(*value).to_be_bytes());
            }
            Request::WriteSingleRegister { address, value } => {
                pdu.extend_from_slice(&address.to_be_bytes());
                pdu.extend_from_slice(&value.to_be_bytes());
            }
            Request::WriteMultipleCoils { start, values } => {
                let packed = pack_bits(values);
                pdu.extend_from_slice(&start.to_be_bytes());
                pdu.extend_from_slice(&(values.len() as u16).to_be_bytes());
                pdu.push(packed.len() as u8);
                pdu.extend_from_slice(&packed);
            }
            Request::WriteMultipleRegisters { start, values } => {
                pdu.extend_from_slice(&start.to_be_bytes());
                pdu.extend_from_slice(&(values.len() as u16).to_be_bytes());
                pdu.push((values.len() * 2) as u8);
                for word in values {
                    pdu.extend_from_slice(&word.to_be_bytes());
                }
            }
        }
        Ok(pdu)
    }

    pub fn decode_pdu(pdu: &[u8]) -> Result<Request, WireError> {
        let (&fc, body) = pdu.split_first().ok_or_else(|| malformed("empty PDU"))?;
        let fc = FunctionCode::try_from(fc)?;
        let field = |i: usize| -> Result<u16, WireError> {
            body.get(i..i + 2)
                .map(|b| u16::from_be_bytes([b[0], b[1]]))
                .ok_or_else(|| malformed(format!("{fc} request truncated")))
        };
        let expect_len = |len: usize| -> Result<(), WireError> {
            if body.len() != len {
                return Err(malformed(format!(
                    "{fc} request body is {} bytes, expected {len}",
                    body.len()
                )));
            }
            Ok(())
        };
        let request = match fc {
            FunctionCode::ReadCoils
            | FunctionCode::ReadDiscreteInputs
            | FunctionCode::ReadHoldingRegisters
            | FunctionCode::ReadInputRegisters => {
                expect_len(4)?;
                Request::read(fc.table(), field(0)?, field(2)?)
            }
            FunctionCode::WriteSingleCoil => {
                expect_len(4)?;
                let value = match field(2)? {
                    0xFF00 => true,
                    0x0000 => false,
                    other => {
                        return Err(WireError::CountOutOfRange {
                            function: fc.value(),
                            count: other as usize,
                        })
                    }
                };
                Request::WriteSingleCoil {
                    address: field(0)?,
                    value,
                }
            }
            FunctionCode::WriteSingleRegister => {
                expect_len(4)?;
                Request::WriteSingleRegister {
                    address: field(0)?,
                    value: field(2)?,
                }
            }
            FunctionCode::WriteMultipleCoils => {
                let start = field(0)?;
                let count = field(2)? as usize;
                let byte_count = *body.get(4).ok_or_else(|| malformed("FC15 request truncated"))? as usize;
                expect_len(5 + byte_count)?;
                if byte_count != count.div_ceil(8) {
                    return Err(WireError::CountOutOfRange {
                        function: fc.value(),
                        count,
                    });
                }
                let values = crate::codec::decode_bits(&body[5..], count).map_err(|e| malformed(e.to_string()))?;
                Request::WriteMultipleCoils { start, values }
            }
            FunctionCode::WriteMultipleRegisters => {
                let start = field(0)?;
                let count = field(2)? as usize;
                let byte_count = *body.get(4).ok_or_else(|| malformed("FC16 request truncated"))? as usize;
                expect_len(5 + byte_count)?;
                if byte_count != count * 2 {
                    return Err(WireError::CountOutOfRange {
                        function: fc.value(),
                        count,
                    });
                }
                let values = body[5..]
                    .chunks_exact(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]))
                    .collect();
                Request::WriteMultipleRegisters { start, values }
            }
        };
        request.validate()?;
        Ok(request)
    }
}

fn coil_word(value: bool) -> u16 {
    if value {
        0xFF00
    } else {
        0x0000
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    /// FC1/FC2 payload, bits packed LSB first.
    ReadBits { function: FunctionCode, packed: Vec<u8> },
    /// FC3/FC4 payload.
    ReadRegisters { function: FunctionCode, words: Vec<u16> },
    /// Echo of a write. `value` is the written word for FC5/FC6 and the
    /// item count for FC15/FC16.
    WriteAck { function: FunctionCode, address: u16, value: u16 },
    Exception { function: FunctionCode, code: ExceptionCode },
}

impl Response {
    pub fn function_code(&self) -> FunctionCode {
        match self {
            Response::ReadBits { function, .. }
            | Response::ReadRegisters { function, .. }
            | Response::WriteAck { function, .. }
            | Response::Exception { function, .. } => *function,
        }
    }

    pub fn is_exception(&self) -> bool {
        matches!(self, Response::Exception { .. })
    }

    pub fn encode_pdu(&self) -> Vec<u8> {
        let mut pdu = Vec::new();
        match self {
            Response::ReadBits { function, packed } => {
                pdu.push(function.value());
                pdu.push(packed.len() as u8);
                pdu.extend_from_slice(packed);
            }
            Response::ReadRegisters { function, words } => {
                pdu.push(function.value());
                pdu.push((words.len() * 2) as u8);
                for word in words {
                    pdu.extend_from_slice(&word.to_be_bytes());
                }
            }
            Response::WriteAck {
                function,
                address,
                value,
            } => {
                pdu.push(function.value());
                pdu.extend_from_slice(&address.to_be_bytes());
                pdu.extend_from_slice(&value.to_be_bytes());
            }
            Response::Exception { function, code } => {
                pdu.push(function.value() | 0x80);
                pdu.push(code.0);
            }
        }
        pdu
    }

    pub fn decode_pdu(pdu: &[u8]) -> Result<Response, WireError> {
        let (&raw_fc, body) = pdu.split_first().ok_or_else(|| malformed("empty PDU"))?;
        if raw_fc & 0x80 != 0 {
            let function = FunctionCode::try_from(raw_fc & 0x7F)?;
            if body.len() != 1 {
                return Err(malformed(format!(
                    "exception body is {} bytes, expected 1",
                    body.len()
                )));
            }
            return Ok(Response::Exception {
                function,
                code: ExceptionCode(body[0]),
            });
        }
        let function = FunctionCode::try_from(raw_fc)?;
        match function {
            FunctionCode::ReadCoils | FunctionCode::ReadDiscreteInputs => {
                let data = counted_body(function, body)?;
                Ok(Response::ReadBits {
                    function,
                    packed: data.to_vec(),
                })
            }
            FunctionCode::ReadHoldingRegisters | FunctionCode::ReadInputRegisters => {
                let data = counted_body(function, body)?;
                if data.len() % 2 != 0 {
                    return Err(malformed(format!(
                        "{function} byte count {} is odd",
                        data.len()
                    )));
                }
                let words = data
                    .chunks_exact(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]))
                    .collect();
                Ok(Response::ReadRegisters { function, words })
            }
            FunctionCode::WriteSingleCoil
            | FunctionCode::WriteSingleRegister
            | FunctionCode::WriteMultipleCoils
            | FunctionCode::WriteMultipleRegisters => {
                if body.len() != 4 {
                    return Err(malformed(format!(
                        "{function} response body is {} bytes, expected 4",
                        body.len()
                    )));
                }
                Ok(Response::WriteAck {
                    function,
                    address: u16::from_be_bytes([body[0], body[1]]),
                    value: u16::from_be_bytes([body[2], body[3]]),
                })
            }
        }
    }
}

fn counted_body(function: FunctionCode, body: &[u8]) -> Result<&[u8], WireError> {
    let (&count, data) = body
        .split_first()
        .ok_or_else(|| malformed(format!("{function} response has no byte count")))?;
    if data.len() != count as usize {
        return Err(malformed(format!(
            "{function} byte count {count} disagrees with {} payload bytes",
            data.len()
        )));
    }
    Ok(data)
}

pub fn encode_adu(transaction_id: u16, unit_id: u8, pdu: &[u8]) -> Vec<u8> {
    let mut adu = Vec::with_capacity(MBAP_HEADER_LEN + pdu.len());
    MbapHeader::for_pdu(transaction_id, unit_id, pdu.len()).write_to(&mut adu);
    adu.extend_from_slice(pdu);
    adu
}

/// Splits one complete ADU into its header and PDU, checking that the MBAP
/// length field agrees with the number of bytes present.
pub fn split_adu(bytes: &[u8]) -> Result<(MbapHeader, &[u8]), WireError> {
    let header = MbapHeader::parse(bytes)?;
    if header.length < 2 || header.length > MAX_MBAP_LENGTH {
        return Err(malformed(format!("impossible MBAP length {}", header.length)));
    }
    let expected = MBAP_HEADER_LEN - 1 + header.length as usize;
    if bytes.len() != expected {
        return Err(malformed(format!(
            "MBAP length {} implies {expected} bytes, got {}",
            header.length,
            bytes.len()
        )));
    }
    Ok((header, &bytes[MBAP_HEADER_LEN..]))
}

pub fn encode_request(transaction_id: u16, unit_id: u8, request: &Request) -> Result<Vec<u8>, WireError> {
    let pdu = request.encode_pdu()?;
    Ok(encode_adu(transaction_id, unit_id, &pdu))
}

/// Encodes a write to an output table, choosing FC5/FC6/FC15/FC16 from the
/// payload shape.
pub fn encode_write(
    transaction_id: u16,
    unit_id: u8,
    table: Table,
    offset: u16,
    payload: WritePayload,
) -> Result<Vec<u8>, WireError> {
    let request = Request::write(table, offset, payload)?;
    encode_request(transaction_id, unit_id, &request)
}

pub fn decode_request(bytes: &[u8]) -> Result<(MbapHeader, Request), WireError> {
    let (header, pdu) = split_adu(bytes)?;
    Ok((header, Request::decode_pdu(pdu)?))
}

pub fn encode_response(transaction_id: u16, unit_id: u8, response: &Response) -> Vec<u8> {
    encode_adu(transaction_id, unit_id, &response.encode_pdu())
}

/// Decodes one response ADU. Exception responses decode successfully as
/// [`Response::Exception`].
pub fn decode_response(bytes: &[u8]) -> Result<(MbapHeader, Response), WireError> {
    let (header, pdu) = split_adu(bytes)?;
    Ok((header, Response::decode_pdu(pdu)?))
}

/// Cuts a byte stream into ADUs using the MBAP length field.
#[derive(Debug, Default)]
pub struct Reassembler {
    buf: BytesMut,
}

impl Reassembler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, chunk: &[u8]) {
        self.buf.extend_from_slice(chunk);
    }

    /// Bytes held that do not yet form a complete ADU.
    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Pops the next complete ADU, if one is buffered.
    pub fn next_adu(&mut self) -> Result<Option<Vec<u8>>, WireError> {
        if self.buf.len() < 6 {
            return Ok(None);
        }
        let length = u16::from_be_bytes([self.buf[4], self.buf[5]]);
        if !(2..=MAX_MBAP_LENGTH).contains(&length) {
            return Err(malformed(format!("impossible MBAP length {length}")));
        }
        let total = 6 + length as usize;
        if self.buf.len() < total {
            return Ok(None);
        }
        let adu = self.buf[..total].to_vec();
        self.buf.advance(total);
        Ok(Some(adu))
    }
}

/// Reassembles a sequence of in-order chunks into complete ADUs.
pub fn reassemble<'a, I>(chunks: I) -> Result<Vec<Vec<u8>>, WireError>
where
    I: IntoIterator<Item = &'a [u8]>,
{
    let mut reassembler = Reassembler::new();
    let mut out = Vec::new();
    for chunk in chunks {
        reassembler.push(chunk);
        while let Some(adu) = reassembler.next_adu()? {
            out.push(adu);
        }
    }
    Ok(out)
}

/// Reads from `reader` until one complete ADU is available.
///
/// Returns `Ok(None)` on a clean end of stream. A stream that ends inside an
/// ADU yields `UnexpectedEof`; framing errors yield `InvalidData`.
pub async fn read_adu<R>(reader: &mut R, reassembler: &mut Reassembler) -> io::Result<Option<Vec<u8>>>
where
    R: AsyncRead + Unpin,
{
    let mut chunk = [0u8; 512];
    loop {
        match reassembler.next_adu() {
            Ok(Some(adu)) => return Ok(Some(adu)),
            Ok(None) => {}
            Err(e) => return Err(io::Error::new(io::ErrorKind::InvalidData, e)),
        }
        let n = reader.read(&mut chunk).await?;
        if n == 0 {
            if reassembler.buffered() == 0 {
                return Ok(None);
            }
            return Err(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                "stream ended inside an ADU",
            ));
        }
        reassembler.push(&chunk[..n]);
    }
}
