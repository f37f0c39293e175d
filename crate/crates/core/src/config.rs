//! Device mapping configuration.
//!
//! One file describes one slave device and the IOs mapped from it:
//!
//! ```yaml
//! name: device
//! address: mbdev
//! unit: 1
//! rate: 20
//! mapping:
//!   coils:
//!     out_Z: 1
//!   discrete_inputs:
//!     in_A: 10001
//!   input_registers:
//!     measure_v:
//!       address: 30001
//!       type: LREAL
//! ```
//!
//! Addresses use the 1-based Modicon numbering (`1`, `10001`, `30001`,
//! `40001`, or the six digit forms `100001`, `300001`, `400001`). A number
//! below 10000 is taken as a plain 1-based address in its own table. An
//! entry may instead give a zero-based `offset`.

use std::collections::HashSet;
use std::fmt;
use std::marker::PhantomData;
use std::path::Path;
use std::time::Duration;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::bus::{is_valid_segment, TopicRemap};
use crate::codec::{CodecError, IecType, ValueType, WordOrder};
use crate::wire::{Table, ADDRESS_SPACE};

pub const DEFAULT_PORT: u16 = 502;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("{0}")]
    UnknownType(#[from] CodecError),
    #[error("duplicate io name '{0}'")]
    DuplicateIoName(String),
    #[error("rate must be a positive number of polls per second, got {0}")]
    InvalidRate(f64),
    #[error("invalid address for '{io}': {source}")]
    InvalidAddress { io: String, source: AddressError },
    #[error("invalid name '{0}': must be a single nonempty topic segment")]
    InvalidName(String),
    #[error("'{io}': {reason}")]
    InvalidEntry { io: String, reason: String },
    #[error("cannot infer config format from '{0}', use --format")]
    UnknownFormat(String),
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AddressError {
    #[error("address {number} carries the prefix of another table than {table}")]
    WrongTablePrefix { table: Table, number: u32 },
    #[error("address {number} is outside table {table}")]
    OffsetOutOfRange { table: Table, number: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigFormat {
    Yaml,
    Json,
}

impl ConfigFormat {
    pub fn from_path(path: &Path) -> Option<ConfigFormat> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "yaml" | "yml" => Some(ConfigFormat::Yaml),
            "json" => Some(ConfigFormat::Json),
            _ => None,
        }
    }
}

impl std::str::FromStr for ConfigFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "yaml" | "yml" => Ok(ConfigFormat::Yaml),
            "json" => Ok(ConfigFormat::Json),
            other => Err(format!("unknown config format '{other}'")),
        }
    }
}

fn modicon_prefix(table: Table) -> u32 {
    match table {
        Table::Coil => 0,
        Table::DiscreteInput => 1,
        Table::InputRegister => 3,
        Table::HoldingRegister => 4,
    }
}

/// Converts a 1-based Modicon address into a zero-based table offset.
pub fn resolve_address(table: Table, number: u32) -> Result<u16, AddressError> {
    let out_of_range = AddressError::OffsetOutOfRange { table, number };
    let wrong_prefix = AddressError::WrongTablePrefix { table, number };
    let one_based = match number {
        0 => return Err(out_of_range),
        1..=9_999 => number,
        10_000..=99_999 => {
            if number / 10_000 != modicon_prefix(table) {
                return Err(wrong_prefix);
            }
            number % 10_000
        }
        100_000..=999_999 => {
            if number / 100_000 != modicon_prefix(table) {
                return Err(wrong_prefix);
            }
            number % 100_000
        }
        _ => return Err(out_of_range),
    };
    if one_based == 0 || one_based > ADDRESS_SPACE {
        return Err(out_of_range);
    }
    Ok((one_based - 1) as u16)
}

/// Canonical Modicon number for an offset, if the offset has one.
fn canonical_address(table: Table, offset: u16) -> Option<u32> {
    let one_based = u32::from(offset) + 1;
    let prefix = modicon_prefix(table);
    match (prefix, one_based) {
        (0, 1..=9_999) => Some(one_based),
        (0, _) => None,
        (p, 1..=9_999) => Some(p * 10_000 + one_based),
        (p, _) => Some(p * 100_000 + one_based),
    }
}

/// One configured IO.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IoMapping {
    pub io_name: String,
    pub table: Table,
    /// Zero-based offset into `table`.
    pub offset: u16,
    pub value_type: ValueType,
    /// Registers for register tables, always 1 for bit tables.
    pub width: u16,
    pub read_topic: String,
    /// Present for coils and holding registers.
    pub write_topic: Option<String>,
    pub error_topic: String,
}

impl IoMapping {
    pub fn new(device: &str, io_name: &str, table: Table, offset: u16, value_type: ValueType) -> IoMapping {
        let width = match value_type {
            ValueType::Bool => 1,
            ValueType::Iec(t) => t.register_width(),
        };
        let read_topic = format!("/{device}/{io_name}");
        IoMapping {
            io_name: io_name.to_string(),
            table,
            offset,
            value_type,
            width,
            write_topic: table.is_output().then(|| format!("{read_topic}/write")),
            error_topic: format!("{read_topic}/error"),
            read_topic,
        }
    }

    /// Half-open address window `[offset, offset + width)`.
    pub fn window(&self) -> (u32, u32) {
        let start = u32::from(self.offset);
        (start, start + u32::from(self.width))
    }

    pub fn iec_type(&self) -> Option<IecType> {
        match self.value_type {
            ValueType::Bool => None,
            ValueType::Iec(t) => Some(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceConfig {
    /// Topic namespace of the device.
    pub name: String,
    pub address: String,
    pub port: u16,
    pub unit: u8,
    /// Polls per second.
    pub rate: f64,
    pub word_order: WordOrder,
    pub max_gap: Option<u16>,
    pub max_read_count: Option<u16>,
    pub mappings: Vec<IoMapping>,
}

impl DeviceConfig {
    pub fn mapping(&self, io_name: &str) -> Option<&IoMapping> {
        self.mappings.iter().find(|m| m.io_name == io_name)
    }

    pub fn poll_period(&self) -> Duration {
        Duration::from_secs_f64(1.0 / self.rate)
    }

    /// Rewrites the topic names of every mapping. The first matching rule
    /// wins for each topic.
    pub fn apply_remaps(&mut self, remaps: &[TopicRemap]) {
        let rename = |topic: &mut String| {
            if let Some(new) = remaps.iter().find_map(|r| r.apply(topic)) {
                *topic = new;
            }
        };
        for m in &mut self.mappings {
            rename(&mut m.read_topic);
            rename(&mut m.error_topic);
            if let Some(t) = m.write_topic.as_mut() {
                rename(t);
            }
        }
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(&RawConfig::from(self)).expect("config serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&RawConfig::from(self)).expect("config serializes")
    }
}

pub fn parse_config(text: &str, format: ConfigFormat) -> Result<DeviceConfig, ConfigError> {
    let raw: RawConfig = match format {
        ConfigFormat::Yaml => serde_yaml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?,
        ConfigFormat::Json => serde_json::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?,
    };
    raw.validate()
}

/// Reads a config file. The format comes from `format` or, failing that,
/// the file extension.
pub fn load_config(path: &Path, format: Option<ConfigFormat>) -> Result<DeviceConfig, ConfigError> {
    let format = format
        .or_else(|| ConfigFormat::from_path(path))
        .ok_or_else(|| ConfigError::UnknownFormat(path.display().to_string()))?;
    let text = std::fs::read_to_string(path)?;
    parse_config(&text, format)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: String,
    address: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    port: Option<u16>,
    unit: u8,
    rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    word_order: Option<WordOrder>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_gap: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_read_count: Option<u16>,
    #[serde(default)]
    mapping: RawMapping,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMapping {
    #[serde(default, skip_serializing_if = "Entries::is_empty")]
    coils: Entries<RawBitEntry>,
    #[serde(default, skip_serializing_if = "Entries::is_empty")]
    discrete_inputs: Entries<RawBitEntry>,
    #[serde(default, skip_serializing_if = "Entries::is_empty")]
    input_registers: Entries<RawRegisterEntry>,
    #[serde(default, skip_serializing_if = "Entries::is_empty")]
    holding_registers: Entries<RawRegisterEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum RawBitEntry {
    Address(u32),
    Location(RawLocation),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLocation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    address: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    offset: Option<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegisterEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    address: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    offset: Option<u32>,
    #[serde(rename = "type")]
    data_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    length: Option<u16>,
}

/// Ordered map that keeps duplicate keys so they can be reported.
#[derive(Debug)]
struct Entries<T>(Vec<(String, T)>);

impl<T> Default for Entries<T> {
    fn default() -> Self {
        Entries(Vec::new())
    }
}

impl<T> Entries<T> {
    fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for Entries<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct EntriesVisitor<T>(PhantomData<T>);

        impl<'de, T: Deserialize<'de>> Visitor<'de> for EntriesVisitor<T> {
            type Value = Entries<T>;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map of io names to addresses")
            }

            fn visit_unit<E>(self) -> Result<Self::Value, E> {
                Ok(Entries(Vec::new()))
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut entries = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, T>()? {
                    entries.push((k, v));
                }
                Ok(Entries(entries))
            }
        }

        deserializer.deserialize_any(EntriesVisitor(PhantomData))
    }
}

impl<T: Serialize> Serialize for Entries<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

fn locate(io: &str, table: Table, address: Option<u32>, offset: Option<u32>) -> Result<u16, ConfigError> {
    let invalid = |source| ConfigError::InvalidAddress {
        io: io.to_string(),
        source,
    };
    match (address, offset) {
        (Some(number), None) => resolve_address(table, number).map_err(invalid),
        (None, Some(offset)) if offset < ADDRESS_SPACE => Ok(offset as u16),
        (None, Some(offset)) => Err(invalid(AddressError::OffsetOutOfRange { table, number: offset })),
        _ => Err(ConfigError::InvalidEntry {
            io: io.to_string(),
            reason: "exactly one of 'address' or 'offset' is required".into(),
        }),
    }
}

impl RawConfig {
    fn validate(self) -> Result<DeviceConfig, ConfigError> {
        if !is_valid_segment(&self.name) {
            return Err(ConfigError::InvalidName(self.name));
        }
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return Err(ConfigError::InvalidRate(self.rate));
        }
        if self.max_read_count == Some(0) {
            return Err(ConfigError::InvalidEntry {
                io: self.name,
                reason: "max_read_count must be positive".into(),
            });
        }
        let device = self.name.as_str();
        let mut mappings = Vec::new();
        let bit_tables = [
            (Table::Coil, &self.mapping.coils),
            (Table::DiscreteInput, &self.mapping.discrete_inputs),
        ];
        for (table, entries) in bit_tables {
            for (io, entry) in &entries.0 {
                let offset = match entry {
                    RawBitEntry::Address(n) => locate(io, table, Some(*n), None)?,
                    RawBitEntry::Location(loc) => locate(io, table, loc.address, loc.offset)?,
                };
                mappings.push((io, IoMapping::new(device, io, table, offset, ValueType::Bool)));
            }
        }
        let register_tables = [
            (Table::InputRegister, &self.mapping.input_registers),
            (Table::HoldingRegister, &self.mapping.holding_registers),
        ];
        for (table, entries) in register_tables {
            for (io, entry) in &entries.0 {
                let iec = IecType::from_name(&entry.data_type, entry.length)?;
                if entry.length.is_some() && !matches!(iec, IecType::String { .. }) {
                    return Err(ConfigError::InvalidEntry {
                        io: io.clone(),
                        reason: format!("'length' does not apply to {iec}"),
                    });
                }
                let offset = locate(io, table, entry.address, entry.offset)?;
                mappings.push((io, IoMapping::new(device, io, table, offset, ValueType::Iec(iec))));
            }
        }

        let mut seen = HashSet::new();
        for (io, mapping) in &mappings {
            if !is_valid_segment(io) {
                return Err(ConfigError::InvalidName(io.to_string()));
            }
            if !seen.insert(io.as_str()) {
                return Err(ConfigError::DuplicateIoName(io.to_string()));
            }
            if mapping.window().1 > ADDRESS_SPACE {
                return Err(ConfigError::InvalidAddress {
                    io: io.to_string(),
                    source: AddressError::OffsetOutOfRange {
                        table: mapping.table,
                        number: mapping.window().1,
                    },
                });
            }
        }

        Ok(DeviceConfig {
            mappings: mappings.into_iter().map(|(_, m)| m).collect(),
            name: self.name,
            address: self.address,
            port: self.port.unwrap_or(DEFAULT_PORT),
            unit: self.unit,
            rate: self.rate,
            word_order: self.word_order.unwrap_or_default(),
            max_gap: self.max_gap,
            max_read_count: self.max_read_count,
        })
    }
}

impl From<&DeviceConfig> for RawConfig {
    fn from(config: &DeviceConfig) -> Self {
        let mut mapping = RawMapping::default();
        for m in &config.mappings {
            let address = canonical_address(m.table, m.offset);
            let offset = address.is_none().then_some(u32::from(m.offset));
            match (m.table, m.value_type) {
                (Table::Coil | Table::DiscreteInput, _) => {
                    let entry = match address {
                        Some(n) => RawBitEntry::Address(n),
                        None => RawBitEntry::Location(RawLocation { address: None, offset }),
                    };
                    let entries = if m.table == Table::Coil {
                        &mut mapping.coils
                    } else {
                        &mut mapping.discrete_inputs
                    };
                    entries.0.push((m.io_name.clone(), entry));
                }
                (table, value_type) => {
                    let (data_type, length) = match value_type {
                        ValueType::Iec(IecType::String { len }) => ("STRING".to_string(), Some(len)),
                        ValueType::Iec(t) => (t.name().to_string(), None),
                        ValueType::Bool => ("INT".to_string(), None),
                    };
                    let entry = RawRegisterEntry {
                        address,
                        offset,
                        data_type,
                        length,
                    };
                    let entries = if table == Table::InputRegister {
                        &mut mapping.input_registers
                    } else {
                        &mut mapping.holding_registers
                    };
                    entries.0.push((m.io_name.clone(), entry));
                }
            }
        }
        RawConfig {
            name: config.name.clone(),
            address: config.address.clone(),
            port: Some(config.port),
            unit: config.unit,
            rate: config.rate,
            word_order: Some(config.word_order),
            max_gap: config.max_gap,
            max_read_count: config.max_read_count,
            mapping,
        }
    }
}
