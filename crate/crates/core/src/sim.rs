//! Modbus/TCP slave simulator.
//!
//! Four zero-initialized tables of 65536 entries, all supported function
//! codes, optional exception and latency injection, and a request log with
//! receive and respond timestamps. One memory image is shared by every
//! connection; each request runs under one lock so read-after-write holds
//! across connections.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::io::AsyncWriteExt;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::broadcast;
use tokio::task::JoinSet;
use tracing::{debug, warn};

use crate::clock::now_us;
use crate::codec::pack_bits;
use crate::config::ConfigFormat;
use crate::wire::{
    encode_adu, read_adu, split_adu, ExceptionCode, Reassembler, Request, Response, Table,
    WireError, ADDRESS_SPACE,
};

const TABLE_LEN: usize = ADDRESS_SPACE as usize;
const LOG_CHANNEL_DEPTH: usize = 65536;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("offset {offset} is outside {table}")]
    OffsetOutOfRange { table: Table, offset: u32 },
    #[error("cannot read memory image: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad memory image: {0}")]
    Image(String),
    #[error("bad exception rule '{0}', expected table:code")]
    ExceptionRule(String),
}

/// The four address tables.
#[derive(Clone, PartialEq, Eq)]
pub struct SlaveMemory {
    coils: Vec<bool>,
    discrete_inputs: Vec<bool>,
    input_registers: Vec<u16>,
    holding_registers: Vec<u16>,
}

impl std::fmt::Debug for SlaveMemory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SlaveMemory").finish_non_exhaustive()
    }
}

impl Default for SlaveMemory {
    fn default() -> Self {
        SlaveMemory {
            coils: vec![false; TABLE_LEN],
            discrete_inputs: vec![false; TABLE_LEN],
            input_registers: vec![0; TABLE_LEN],
            holding_registers: vec![0; TABLE_LEN],
        }
    }
}

fn span(table: Table, offset: u32, len: usize) -> Result<std::ops::Range<usize>, SimError> {
    let end = offset as usize + len;
    if end > TABLE_LEN {
        return Err(SimError::OffsetOutOfRange {
            table,
            offset: offset.max(ADDRESS_SPACE),
        });
    }
    Ok(offset as usize..end)
}

impl SlaveMemory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets one entry. Bit tables store `value != 0`.
    pub fn poke(&mut self, table: Table, offset: u32, value: u16) -> Result<(), SimError> {
        self.poke_words(table, offset, &[value])
    }

    pub fn poke_words(&mut self, table: Table, offset: u32, values: &[u16]) -> Result<(), SimError> {
        let r = span(table, offset, values.len())?;
        match table {
            Table::Coil | Table::DiscreteInput => {
                for (slot, v) in self.bits_mut(table)[r].iter_mut().zip(values) {
                    *slot = *v != 0;
                }
            }
            _ => self.words_mut(table)[r].copy_from_slice(values),
        }
        Ok(())
    }

    pub fn poke_bits(&mut self, table: Table, offset: u32, values: &[bool]) -> Result<(), SimError> {
        let words: Vec<u16> = values.iter().map(|&b| u16::from(b)).collect();
        self.poke_words(table, offset, &words)
    }

    pub fn peek(&self, table: Table, offset: u32) -> Result<u16, SimError> {
        let r = span(table, offset, 1)?;
        Ok(match table {
            Table::Coil => u16::from(self.coils[r.start]),
            Table::DiscreteInput => u16::from(self.discrete_inputs[r.start]),
            Table::InputRegister => self.input_registers[r.start],
            Table::HoldingRegister => self.holding_registers[r.start],
        })
    }

    pub fn bits(&self, table: Table) -> &[bool] {
        match table {
            Table::Coil => &self.coils,
            _ => &self.discrete_inputs,
        }
    }

    pub fn words(&self, table: Table) -> &[u16] {
        match table {
            Table::InputRegister => &self.input_registers,
            _ => &self.holding_registers,
        }
    }

    fn bits_mut(&mut self, table: Table) -> &mut [bool] {
        match table {
            Table::Coil => &mut self.coils,
            _ => &mut self.discrete_inputs,
        }
    }

    fn words_mut(&mut self, table: Table) -> &mut [u16] {
        match table {
            Table::InputRegister => &mut self.input_registers,
            _ => &mut self.holding_registers,
        }
    }

    pub fn apply_image(&mut self, image: &MemoryImage) -> Result<(), SimError> {
        for (table, blocks) in image.tables() {
            for (offset, values) in blocks {
                let words: Vec<u16> = values.iter().map(|c| c.word()).collect();
                self.poke_words(table, *offset, &words)?;
            }
        }
        Ok(())
    }

    /// Answers one request against this memory.
    pub fn execute(&mut self, request: &Request) -> Response {
        let function = request.function_code();
        if let Err(e) = request.validate() {
            return Response::Exception {
                function,
                code: exception_for(&e),
            };
        }
        let (start, count) = request.window();
        let r = start as usize..start as usize + count;
        match request {
            Request::ReadCoils { .. } | Request::ReadDiscreteInputs { .. } => Response::ReadBits {
                function,
                packed: pack_bits(&self.bits(function.table())[r]),
            },
            Request::ReadHoldingRegisters { .. } | Request::ReadInputRegisters { .. } => Response::ReadRegisters {
                function,
                words: self.words(function.table())[r].to_vec(),
            },
            Request::WriteSingleCoil { address, value } => {
                self.coils[*address as usize] = *value;
                Response::WriteAck {
                    function,
                    address: *address,
                    value: if *value { 0xFF00 } else { 0 },
                }
            }
            Request::WriteSingleRegister { address, value } => {
                self.holding_registers[*address as usize] = *value;
                Response::WriteAck {
                    function,
                    address: *address,
                    value: *value,
                }
            }
            Request::WriteMultipleCoils { start, values } => {
                self.coils[r].copy_from_slice(values);
                Response::WriteAck {
                    function,
                    address: *start,
                    value: values.len() as u16,
                }
            }
            Request::WriteMultipleRegisters { start, values } => {
                self.holding_registers[r].copy_from_slice(values);
                Response::WriteAck {
                    function,
                    address: *start,
                    value: values.len() as u16,
                }
            }
        }
    }
}

fn exception_for(e: &WireError) -> ExceptionCode {
    match e {
        WireError::AddressOverflow { .. } => ExceptionCode::ILLEGAL_DATA_ADDRESS,
        WireError::UnknownFunction(_) => ExceptionCode::ILLEGAL_FUNCTION,
        _ => ExceptionCode::ILLEGAL_DATA_VALUE,
    }
}

/// One stored value in a memory image: a bool or a register word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Bit(bool),
    Word(u16),
}

impl Cell {
    pub fn word(self) -> u16 {
        match self {
            Cell::Bit(b) => u16::from(b),
            Cell::Word(w) => w,
        }
    }
}

/// Memory file: per table, start offset → consecutive values.
///
/// ```yaml
/// input_registers:
///   0: [0x3FF0, 0, 0, 0]
/// coils:
///   5: [true, false, true]
/// ```
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryImage {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub coils: BTreeMap<u32, Vec<Cell>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub discrete_inputs: BTreeMap<u32, Vec<Cell>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub input_registers: BTreeMap<u32, Vec<Cell>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub holding_registers: BTreeMap<u32, Vec<Cell>>,
}

impl MemoryImage {
    pub fn tables(&self) -> [(Table, &BTreeMap<u32, Vec<Cell>>); 4] {
        [
            (Table::Coil, &self.coils),
            (Table::DiscreteInput, &self.discrete_inputs),
            (Table::InputRegister, &self.input_registers),
            (Table::HoldingRegister, &self.holding_registers),
        ]
    }

    pub fn parse(text: &str, format: ConfigFormat) -> Result<MemoryImage, SimError> {
        match format {
            ConfigFormat::Json => serde_json::from_str(text).map_err(|e| SimError::Image(e.to_string())),
            ConfigFormat::Yaml => serde_yaml::from_str(text).map_err(|e| SimError::Image(e.to_string())),
        }
    }
}

/// Reads a memory image (YAML unless the extension says `.json`) into
/// fresh memory.
pub fn load_memory(path: &Path) -> Result<SlaveMemory, SimError> {
    let text = std::fs::read_to_string(path)?;
    let format = ConfigFormat::from_path(path).unwrap_or(ConfigFormat::Yaml);
    let mut memory = SlaveMemory::new();
    memory.apply_image(&MemoryImage::parse(&text, format)?)?;
    Ok(memory)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FaultPolicy {
    /// Exception answered to every request touching the table.
    pub exceptions: BTreeMap<Table, ExceptionCode>,
    /// Added before each response is sent.
    pub latency: Duration,
    /// Close a connection after it has been answered this many requests.
    pub drop_after: Option<u64>,
}

impl FaultPolicy {
    /// Parses a `table:code` rule such as `input_register:2` and adds it.
    pub fn add_exception_rule(&mut self, rule: &str) -> Result<(), SimError> {
        let bad = || SimError::ExceptionRule(rule.to_string());
        let (table, code) = rule.split_once(':').ok_or_else(bad)?;
        let table: Table = table.trim().parse().map_err(|_| bad())?;
        let code: u8 = code.trim().parse().map_err(|_| bad())?;
        if code == 0 || code >= 0x80 {
            return Err(bad());
        }
        self.exceptions.insert(table, ExceptionCode(code));
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestLogEntry {
    pub connection: u64,
    pub transaction_id: u16,
    pub unit_id: u8,
    pub function: u8,
    pub start: u16,
    pub count: u16,
    /// When the complete request had been read.
    pub received_us: u64,
    /// Just before the response was written to the socket.
    pub responded_us: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exception: Option<u8>,
}

struct State {
    memory: Arc<Mutex<SlaveMemory>>,
    policy: Mutex<FaultPolicy>,
    log: Mutex<Vec<RequestLogEntry>>,
    log_tx: broadcast::Sender<RequestLogEntry>,
}

pub struct Simulator {
    local_addr: SocketAddr,
    state: Arc<State>,
    accept: tokio::task::JoinHandle<()>,
}

impl Simulator {
    /// Binds with fresh zeroed memory.
    pub async fn bind(addr: &str, policy: FaultPolicy) -> std::io::Result<Simulator> {
        Self::bind_with_memory(addr, Arc::new(Mutex::new(SlaveMemory::new())), policy).await
    }

    /// Binds sharing `memory`, so a restarted simulator keeps its state.
    pub async fn bind_with_memory(
        addr: &str,
        memory: Arc<Mutex<SlaveMemory>>,
        policy: FaultPolicy,
    ) -> std::io::Result<Simulator> {
        let listener = TcpListener::bind(addr).await?;
        let local_addr = listener.local_addr()?;
        let (log_tx, _) = broadcast::channel(LOG_CHANNEL_DEPTH);
        let state = Arc::new(State {
            memory,
            policy: Mutex::new(policy),
            log: Mutex::new(Vec::new()),
            log_tx,
        });
        let accept = tokio::spawn(accept_loop(listener, Arc::clone(&state)));
        Ok(Simulator {
            local_addr,
            state,
            accept,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn memory(&self) -> Arc<Mutex<SlaveMemory>> {
        Arc::clone(&self.state.memory)
    }

    pub fn poke(&self, table: Table, offset: u32, value: u16) -> Result<(), SimError> {
        self.state.memory.lock().unwrap().poke(table, offset, value)
    }

    pub fn set_policy(&self, policy: FaultPolicy) {
        *self.state.policy.lock().unwrap() = policy;
    }

    pub fn policy(&self) -> FaultPolicy {
        self.state.policy.lock().unwrap().clone()
    }

    /// Copy of the request log so far.
    pub fn log(&self) -> Vec<RequestLogEntry> {
        self.state.log.lock().unwrap().clone()
    }

    pub fn clear_log(&self) {
        self.state.log.lock().unwrap().clear();
    }

    /// Live feed of log entries from now on.
    pub fn subscribe_log(&self) -> broadcast::Receiver<RequestLogEntry> {
        self.state.log_tx.subscribe()
    }

    /// Stops accepting and closes every open connection.
    pub fn shutdown(self) {
        self.accept.abort();
    }
}

impl Drop for Simulator {
    fn drop(&mut self) {
        self.accept.abort();
    }
}

async fn accept_loop(listener: TcpListener, state: Arc<State>) {
    let mut connections = JoinSet::new();
    let mut next_id = 0u64;
    loop {
        tokio::select! {
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    next_id += 1;
                    debug!(connection = next_id, %peer, "slave accepted connection");
                    connections.spawn(serve_connection(stream, next_id, Arc::clone(&state)));
                }
                Err(e) => warn!(error = %e, "accept failed"),
            },
            Some(_) = connections.join_next() => {}
        }
    }
}

async fn serve_connection(mut stream: TcpStream, connection: u64, state: Arc<State>) {
    let _ = stream.set_nodelay(true);
    let mut reassembler = Reassembler::new();
    let mut answered = 0u64;
    loop {
        let bytes = match read_adu(&mut stream, &mut reassembler).await {
            Ok(Some(b)) => b,
            Ok(None) => break,
            Err(e) => {
                warn!(connection, error = %e, "closing connection on bad frame");
                break;
            }
        };
        let received_us = now_us();
        let (header, pdu) = match split_adu(&bytes) {
            Ok(parts) => parts,
            Err(e) => {
                warn!(connection, error = %e, "closing connection on bad frame");
                break;
            }
        };
        let function = pdu[0];
        let (start, count, response_pdu, exception) = match Request::decode_pdu(pdu) {
            Ok(request) => {
                let (start, count) = request.window();
                let policy = state.policy.lock().unwrap().clone();
                let response = match policy.exceptions.get(&request.function_code().table()) {
                    Some(code) => Response::Exception {
                        function: request.function_code(),
                        code: *code,
                    },
                    None => state.memory.lock().unwrap().execute(&request),
                };
                if !policy.latency.is_zero() {
                    tokio::time::sleep(policy.latency).await;
                }
                let exception = match &response {
                    Response::Exception { code, .. } => Some(code.0),
                    _ => None,
                };
                (start, count as u16, response.encode_pdu(), exception)
            }
            Err(WireError::MalformedFrame(reason)) => {
                warn!(connection, reason, "closing connection on malformed request");
                break;
            }
            Err(e) => {
                let code = exception_for(&e);
                (0, 0, vec![function | 0x80, code.0], Some(code.0))
            }
        };
        let adu = encode_adu(header.transaction_id, header.unit_id, &response_pdu);
        let responded_us = now_us();
        if stream.write_all(&adu).await.is_err() {
            break;
        }
        let entry = RequestLogEntry {
            connection,
            transaction_id: header.transaction_id,
            unit_id: header.unit_id,
            function,
            start,
            count,
            received_us,
            responded_us,
            exception,
        };
        let _ = state.log_tx.send(entry.clone());
        state.log.lock().unwrap().push(entry);
        answered += 1;
        let drop_after = state.policy.lock().unwrap().drop_after;
        if drop_after.is_some_and(|n| answered >= n) {
            debug!(connection, answered, "dropping connection by policy");
            break;
        }
    }
}
