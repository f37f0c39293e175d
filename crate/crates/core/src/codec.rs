//! Typed interpretation of raw register words and packed bits.
//!
//! Each IEC 61131-3 elementary type maps to exactly one [`IoValue`] variant:
//!
//! | IEC type | width (registers) | value            |
//! |----------|-------------------|------------------|
//! | BYTE     | 1                 | `BoolArray(8)`   |
//! | WORD     | 1                 | `BoolArray(16)`  |
//! | DWORD    | 2                 | `BoolArray(32)`  |
//! | LWORD    | 4                 | `BoolArray(64)`  |
//! | SINT     | 1                 | `Int8`           |
//! | INT      | 1                 | `Int16`          |
//! | DINT     | 2                 | `Int32`          |
//! | LINT     | 4                 | `Int64`          |
//! | USINT    | 1                 | `UInt8`          |
//! | UINT     | 1                 | `UInt16`         |
//! | UDINT    | 2                 | `UInt32`         |
//! | ULINT    | 4                 | `UInt64`         |
//! | REAL     | 2                 | `Float32`        |
//! | LREAL    | 4                 | `Float64`        |
//! | CHAR     | 1                 | `Char`           |
//! | STRING(n)| ceil(n/2)         | `Text`           |
//!
//! Bytes inside a register are big-endian. [`WordOrder`] selects the order of
//! registers for the multi-register numeric and bit-string types. 8-bit types
//! live in the low byte of their register; the high byte is written as zero
//! and ignored when reading. Bit arrays are indexed from the least
//! significant bit. Strings pack two characters per register, high byte
//! first, NUL padded; characters are single bytes (Latin-1).

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("expected {expected} items, got {actual}")]
    WidthMismatch { expected: usize, actual: usize },
    #[error("value of type {actual} does not match {expected}")]
    TypeMismatch { expected: String, actual: String },
    #[error("text of {actual} characters exceeds capacity {capacity}")]
    TextTooLong { capacity: u16, actual: usize },
    #[error("character {0:?} cannot be encoded as a single nonzero byte")]
    UnencodableChar(char),
    #[error("value {value} is out of range for {target}")]
    OutOfRange { value: String, target: String },
    #[error("unknown IEC type '{0}'")]
    UnknownType(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WordOrder {
    /// First register holds the most significant word.
    #[default]
    #[serde(alias = "HighWordFirst", alias = "big")]
    HighWordFirst,
    /// First register holds the least significant word.
    #[serde(alias = "LowWordFirst", alias = "little")]
    LowWordFirst,
}

impl WordOrder {
    pub fn opposite(self) -> WordOrder {
        match self {
            WordOrder::HighWordFirst => WordOrder::LowWordFirst,
            WordOrder::LowWordFirst => WordOrder::HighWordFirst,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IecType {
    Byte,
    Word,
    Dword,
    Lword,
    Sint,
    Int,
    Dint,
    Lint,
    Usint,
    Uint,
    Udint,
    Ulint,
    Real,
    Lreal,
    Char,
    /// Fixed-capacity string of `len` single-byte characters.
    String { len: u16 },
}

impl IecType {
    /// Every fixed-width type. STRING is parameterised and listed separately.
    pub const FIXED: [IecType; 15] = [
        IecType::Byte,
        IecType::Word,
        IecType::Dword,
        IecType::Lword,
        IecType::Sint,
        IecType::Int,
        IecType::Dint,
        IecType::Lint,
        IecType::Usint,
        IecType::Uint,
        IecType::Udint,
        IecType::Ulint,
        IecType::Real,
        IecType::Lreal,
        IecType::Char,
    ];

    pub fn register_width(self) -> u16 {
        match self {
            IecType::Byte
            | IecType::Word
            | IecType::Sint
            | IecType::Int
            | IecType::Usint
            | IecType::Uint
            | IecType::Char => 1,
            IecType::Dword | IecType::Dint | IecType::Udint | IecType::Real => 2,
            IecType::Lword | IecType::Lint | IecType::Ulint | IecType::Lreal => 4,
            IecType::String { len } => len.div_ceil(2),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            IecType::Byte => "BYTE",
            IecType::Word => "WORD",
            IecType::Dword => "DWORD",
            IecType::Lword => "LWORD",
            IecType::Sint => "SINT",
            IecType::Int => "INT",
            IecType::Dint => "DINT",
            IecType::Lint => "LINT",
            IecType::Usint => "USINT",
            IecType::Uint => "UINT",
            IecType::Udint => "UDINT",
            IecType::Ulint => "ULINT",
            IecType::Real => "REAL",
            IecType::Lreal => "LREAL",
            IecType::Char => "CHAR",
            IecType::String { .. } => "STRING",
        }
    }

    /// Looks up a type by its IEC name. `length` is the character capacity
    /// and is only meaningful for STRING.
    pub fn from_name(name: &str, length: Option<u16>) -> Result<IecType, CodecError> {
        let upper = name.trim().to_ascii_uppercase();
        if upper == "STRING" {
            return match length {
                Some(len) if len > 0 => Ok(IecType::String { len }),
                _ => Err(CodecError::UnknownType(format!(
                    "{name} requires a positive length"
                ))),
            };
        }
        IecType::FIXED
            .iter()
            .copied()
            .find(|t| t.name() == upper)
            .ok_or_else(|| CodecError::UnknownType(name.to_string()))
    }

    /// Number of bits for the bit-string types.
    fn bit_len(self) -> Option<usize> {
        match self {
            IecType::Byte => Some(8),
            IecType::Word => Some(16),
            IecType::Dword => Some(32),
            IecType::Lword => Some(64),
            _ => None,
        }
    }
}

impl fmt::Display for IecType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IecType::String { len } => write!(f, "STRING({len})"),
            other => f.write_str(other.name()),
        }
    }
}

/// Type of the value carried by one mapped IO.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValueType {
    /// Coils and discrete inputs.
    Bool,
    Iec(IecType),
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueType::Bool => f.write_str("BOOL"),
            ValueType::Iec(t) => t.fmt(f),
        }
    }
}

/// A typed IO value.
///
/// Equality on floats compares bit patterns, so `NaN == NaN` for identical
/// payloads and `0.0 != -0.0`.
#[derive(Debug, Clone)]
pub enum IoValue {
    Bool(bool),
    BoolArray(Vec<bool>),
    Int8(i8),
    Int16(i16),
    Int32(i32),
    Int64(i64),
    UInt8(u8),
    UInt16(u16),
    UInt32(u32),
    UInt64(u64),
    Float32(f32),
    Float64(f64),
    /// Single-byte character.
    Char(u8),
    Text(String),
}

impl PartialEq for IoValue {
    fn eq(&self, other: &Self) -> bool {
        use IoValue::*;
        match (self, other) {
            (Bool(a), Bool(b)) => a == b,
            (BoolArray(a), BoolArray(b)) => a == b,
            (Int8(a), Int8(b)) => a == b,
            (Int16(a), Int16(b)) => a == b,
            (Int32(a), Int32(b)) => a == b,
            (Int64(a), Int64(b)) => a == b,
            (UInt8(a), UInt8(b)) => a == b,
            (UInt16(a), UInt16(b)) => a == b,
            (UInt32(a), UInt32(b)) => a == b,
            (UInt64(a), UInt64(b)) => a == b,
            (Float32(a), Float32(b)) => a.to_bits() == b.to_bits(),
            (Float64(a), Float64(b)) => a.to_bits() == b.to_bits(),
            (Char(a), Char(b)) => a == b,
            (Text(a), Text(b)) => a == b,
            _ => false,
        }
    }
}

impl IoValue {
    pub fn kind(&self) -> &'static str {
        match self {
            IoValue::Bool(_) => "Bool",
            IoValue::BoolArray(_) => "BoolArray",
            IoValue::Int8(_) => "Int8",
            IoValue::Int16(_) => "Int16",
            IoValue::Int32(_) => "Int32",
            IoValue::Int64(_) => "Int64",
            IoValue::UInt8(_) => "UInt8",
            IoValue::UInt16(_) => "UInt16",
            IoValue::UInt32(_) => "UInt32",
            IoValue::UInt64(_) => "UInt64",
            IoValue::Float32(_) => "Float32",
            IoValue::Float64(_) => "Float64",
            IoValue::Char(_) => "Char",
            IoValue::Text(_) => "Text",
        }
    }

    /// JSON form used on the NDJSON interface. 64-bit integers become
    /// strings, non-finite floats become `"NaN"`, `"Infinity"` or
    /// `"-Infinity"`.
    pub fn to_json(&self) -> Value {
        match self {
            IoValue::Bool(b) => Value::Bool(*b),
            IoValue::BoolArray(bits) => Value::Array(bits.iter().map(|b| Value::Bool(*b)).collect()),
            IoValue::Int8(v) => Value::from(*v),
            IoValue::Int16(v) => Value::from(*v),
            IoValue::Int32(v) => Value::from(*v),
            IoValue::Int64(v) => Value::String(v.to_string()),
            IoValue::UInt8(v) => Value::from(*v),
            IoValue::UInt16(v) => Value::from(*v),
            IoValue::UInt32(v) => Value::from(*v),
            IoValue::UInt64(v) => Value::String(v.to_string()),
            IoValue::Float32(v) => float_json(*v as f64, v.is_finite()),
            IoValue::Float64(v) => float_json(*v, v.is_finite()),
            IoValue::Char(c) => Value::String(char::from(*c).to_string()),
            IoValue::Text(s) => Value::String(s.clone()),
        }
    }

    /// Interprets a JSON value as the given target type.
    pub fn from_json(value: &Value, target: ValueType) -> Result<IoValue, CodecError> {
        let mismatch = || CodecError::TypeMismatch {
            expected: target.to_string(),
            actual: json_kind(value).to_string(),
        };
        let iec = match target {
            ValueType::Bool => return value.as_bool().map(IoValue::Bool).ok_or_else(mismatch),
            ValueType::Iec(t) => t,
        };
        match iec {
            IecType::Byte | IecType::Word | IecType::Dword | IecType::Lword => {
                let bits = value
                    .as_array()
                    .ok_or_else(mismatch)?
                    .iter()
                    .map(|b| b.as_bool().ok_or_else(mismatch))
                    .collect::<Result<Vec<_>, _>>()?;
                let expected = iec.bit_len().unwrap_or_default();
                if bits.len() != expected {
                    return Err(CodecError::WidthMismatch {
                        expected,
                        actual: bits.len(),
                    });
                }
                Ok(IoValue::BoolArray(bits))
            }
            IecType::Sint => json_int(value, iec).map(|v| IoValue::Int8(v as i8)),
            IecType::Int => json_int(value, iec).map(|v| IoValue::Int16(v as i16)),
            IecType::Dint => json_int(value, iec).map(|v| IoValue::Int32(v as i32)),
            IecType::Lint => json_int(value, iec).map(|v| IoValue::Int64(v as i64)),
            IecType::Usint => json_int(value, iec).map(|v| IoValue::UInt8(v as u8)),
            IecType::Uint => json_int(value, iec).map(|v| IoValue::UInt16(v as u16)),
            IecType::Udint => json_int(value, iec).map(|v| IoValue::UInt32(v as u32)),
            IecType::Ulint => json_int(value, iec).map(|v| IoValue::UInt64(v as u64)),
            IecType::Real => json_float(value)
                .map(|v| IoValue::Float32(v as f32))
                .ok_or_else(mismatch),
            IecType::Lreal => json_float(value).map(IoValue::Float64).ok_or_else(mismatch),
            IecType::Char => match value {
                Value::String(s) => {
                    let mut chars = s.chars();
                    match (chars.next(), chars.next()) {
                        (Some(c), None) => u8::try_from(u32::from(c))
                            .map(IoValue::Char)
                            .map_err(|_| CodecError::UnencodableChar(c)),
                        _ => Err(mismatch()),
                    }
                }
                Value::Number(_) => json_int(value, iec).map(|v| IoValue::Char(v as u8)),
                _ => Err(mismatch()),
            },
            IecType::String { .. } => value
                .as_str()
                .map(|s| IoValue::Text(s.to_string()))
                .ok_or_else(mismatch),
        }
    }
}

impl fmt::Display for IoValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_json())
    }
}

fn float_json(v: f64, finite: bool) -> Value {
    if finite {
        serde_json::Number::from_f64(v)
            .map(Value::Number)
            .unwrap_or(Value::Null)
    } else if v.is_nan() {
        Value::String("NaN".into())
    } else if v > 0.0 {
        Value::String("Infinity".into())
    } else {
        Value::String("-Infinity".into())
    }
}

fn json_float(value: &Value) -> Option<f64> {
    match value {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => match s.as_str() {
            "NaN" => Some(f64::NAN),
            "Infinity" => Some(f64::INFINITY),
            "-Infinity" => Some(f64::NEG_INFINITY),
            other => other.parse().ok(),
        },
        _ => None,
    }
}

fn json_kind(value: &Value) -> &'static str {
    match value {
        Value::Null => "null",
        Value::Bool(_) => "bool",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// Integer from a JSON number or decimal string, range-checked against the
/// target type.
fn json_int(value: &Value, target: IecType) -> Result<i128, CodecError> {
    let parsed: Option<i128> = match value {
        Value::Number(n) => n
            .as_i64()
            .map(i128::from)
            .or_else(|| n.as_u64().map(i128::from)),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    };
    let v = parsed.ok_or_else(|| CodecError::TypeMismatch {
        expected: target.to_string(),
        actual: json_kind(value).to_string(),
    })?;
    let (lo, hi): (i128, i128) = match target {
        IecType::Sint => (i8::MIN.into(), i8::MAX.into()),
        IecType::Int => (i16::MIN.into(), i16::MAX.into()),
        IecType::Dint => (i32::MIN.into(), i32::MAX.into()),
        IecType::Lint => (i64::MIN.into(), i64::MAX.into()),
        IecType::Usint | IecType::Char => (0, u8::MAX.into()),
        IecType::Uint => (0, u16::MAX.into()),
        IecType::Udint => (0, u32::MAX.into()),
        IecType::Ulint => (0, u64::MAX.into()),
        _ => (i128::MIN, i128::MAX),
    };
    if v < lo || v > hi {
        return Err(CodecError::OutOfRange {
            value: v.to_string(),
            target: target.to_string(),
        });
    }
    Ok(v)
}

fn words_to_u64(words: &[u16], order: WordOrder) -> u64 {
    let fold = |acc: u64, w: &u16| (acc << 16) | u64::from(*w);
    match order {
        WordOrder::HighWordFirst => words.iter().fold(0, fold),
        WordOrder::LowWordFirst => words.iter().rev().fold(0, fold),
    }
}

fn u64_to_words(value: u64, width: usize, order: WordOrder) -> Vec<u16> {
    let mut words: Vec<u16> = (0..width)
        .rev()
        .map(|i| (value >> (16 * i)) as u16)
        .collect();
    if order == WordOrder::LowWordFirst {
        words.reverse();
    }
    words
}

fn bits_of(value: u64, len: usize) -> Vec<bool> {
    (0..len).map(|i| (value >> i) & 1 == 1).collect()
}

fn value_of_bits(bits: &[bool]) -> u64 {
    bits.iter()
        .enumerate()
        .fold(0, |acc, (i, b)| acc | (u64::from(*b) << i))
}

/// Interprets `words` as a value of type `t`.
///
/// Total over every word pattern of the right width.
pub fn decode_registers(t: IecType, words: &[u16], order: WordOrder) -> Result<IoValue, CodecError> {
    let width = t.register_width() as usize;
    if words.len() != width {
        return Err(CodecError::WidthMismatch {
            expected: width,
            actual: words.len(),
        });
    }
    let low_byte = (words[0] & 0x00FF) as u8;
    Ok(match t {
        IecType::Byte => IoValue::BoolArray(bits_of(low_byte.into(), 8)),
        IecType::Word | IecType::Dword | IecType::Lword => {
            let raw = words_to_u64(words, order);
            IoValue::BoolArray(bits_of(raw, t.bit_len().unwrap_or_default()))
        }
        IecType::Sint => IoValue::Int8(low_byte as i8),
        IecType::Usint => IoValue::UInt8(low_byte),
        IecType::Char => IoValue::Char(low_byte),
        IecType::Int => IoValue::Int16(words[0] as i16),
        IecType::Uint => IoValue::UInt16(words[0]),
        IecType::Dint => IoValue::Int32(words_to_u64(words, order) as u32 as i32),
        IecType::Udint => IoValue::UInt32(words_to_u64(words, order) as u32),
        IecType::Real => IoValue::Float32(f32::from_bits(words_to_u64(words, order) as u32)),
        IecType::Lint => IoValue::Int64(words_to_u64(words, order) as i64),
        IecType::Ulint => IoValue::UInt64(words_to_u64(words, order)),
        IecType::Lreal => IoValue::Float64(f64::from_bits(words_to_u64(words, order))),
        IecType::String { len } => {
            let text = words
                .iter()
                .flat_map(|w| w.to_be_bytes())
                .take(len as usize)
                .take_while(|b| *b != 0)
                .map(char::from)
                .collect();
            IoValue::Text(text)
        }
    })
}

/// Inverse of [`decode_registers`].
pub fn encode_registers(t: IecType, value: &IoValue, order: WordOrder) -> Result<Vec<u16>, CodecError> {
    let width = t.register_width() as usize;
    let mismatch = || CodecError::TypeMismatch {
        expected: t.to_string(),
        actual: value.kind().to_string(),
    };
    let words = match (t, value) {
        (IecType::Byte | IecType::Word | IecType::Dword | IecType::Lword, IoValue::BoolArray(bits)) => {
            let expected = t.bit_len().unwrap_or_default();
            if bits.len() != expected {
                return Err(CodecError::WidthMismatch {
                    expected,
                    actual: bits.len(),
                });
            }
            u64_to_words(value_of_bits(bits), width, order)
        }
        (IecType::Sint, IoValue::Int8(v)) => vec![u16::from(*v as u8)],
        (IecType::Usint, IoValue::UInt8(v)) => vec![u16::from(*v)],
        (IecType::Char, IoValue::Char(c)) => vec![u16::from(*c)],
        (IecType::Int, IoValue::Int16(v)) => vec![*v as u16],
        (IecType::Uint, IoValue::UInt16(v)) => vec![*v],
        (IecType::Dint, IoValue::Int32(v)) => u64_to_words(u64::from(*v as u32), width, order),
        (IecType::Udint, IoValue::UInt32(v)) => u64_to_words(u64::from(*v), width, order),
        (IecType::Real, IoValue::Float32(v)) => u64_to_words(u64::from(v.to_bits()), width, order),
        (IecType::Lint, IoValue::Int64(v)) => u64_to_words(*v as u64, width, order),
        (IecType::Ulint, IoValue::UInt64(v)) => u64_to_words(*v, width, order),
        (IecType::Lreal, IoValue::Float64(v)) => u64_to_words(v.to_bits(), width, order),
        (IecType::String { len }, IoValue::Text(text)) => {
            let mut bytes = Vec::with_capacity(width * 2);
            for c in text.chars() {
                match u8::try_from(u32::from(c)) {
                    Ok(b) if b != 0 => bytes.push(b),
                    _ => return Err(CodecError::UnencodableChar(c)),
                }
            }
            if bytes.len() > len as usize {
                return Err(CodecError::TextTooLong {
                    capacity: len,
                    actual: bytes.len(),
                });
            }
            bytes.resize(width * 2, 0);
            bytes
                .chunks_exact(2)
                .map(|pair| u16::from_be_bytes([pair[0], pair[1]]))
                .collect()
        }
        _ => return Err(mismatch()),
    };
    Ok(words)
}

/// Unpacks `count` bits, LSB of the first byte first.
pub fn decode_bits(packed: &[u8], count: usize) -> Result<Vec<bool>, CodecError> {
    let expected = count.div_ceil(8);
    if packed.len() != expected {
        return Err(CodecError::WidthMismatch {
            expected,
            actual: packed.len(),
        });
    }
    Ok((0..count).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect())
}

/// Packs bits LSB first; unused high bits of the last byte are zero.
pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut packed = vec![0u8; bits.len().div_ceil(8)];
    for (i, _) in bits.iter().enumerate().filter(|(_, b)| **b) {
        packed[i / 8] |= 1 << (i % 8);
    }
    packed
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_widths() {
        let widths: Vec<u16> = IecType::FIXED.iter().map(|t| t.register_width()).collect();
        assert_eq!(widths, vec![1, 1, 2, 4, 1, 1, 2, 4, 1, 1, 2, 4, 2, 4, 1]);
        assert_eq!(IecType::String { len: 1 }.register_width(), 1);
        assert_eq!(IecType::String { len: 4 }.register_width(), 2);
        assert_eq!(IecType::String { len: 5 }.register_width(), 3);
    }

    #[test]
    fn lreal_one() {
        let v = decode_registers(IecType::Lreal, &[0x3FF0, 0, 0, 0], WordOrder::HighWordFirst).unwrap();
        assert_eq!(v, IoValue::Float64(1.0));
        assert_eq!(
            encode_registers(IecType::Lreal, &IoValue::Float64(1.0), WordOrder::HighWordFirst).unwrap(),
            vec![0x3FF0, 0, 0, 0]
        );
        assert_eq!(
            encode_registers(IecType::Lreal, &IoValue::Float64(1.0), WordOrder::LowWordFirst).unwrap(),
            vec![0, 0, 0, 0x3FF0]
        );
    }

    #[test]
    fn int_zero_and_negative() {
        assert_eq!(
            decode_registers(IecType::Int, &[0], WordOrder::HighWordFirst).unwrap(),
            IoValue::Int16(0)
        );
        assert_eq!(
            encode_registers(IecType::Int, &IoValue::Int16(-2), WordOrder::HighWordFirst).unwrap(),
            vec![0xFFFE]
        );
        assert_eq!(
            encode_registers(IecType::Ulint, &IoValue::UInt64(0), WordOrder::LowWordFirst).unwrap(),
            vec![0, 0, 0, 0]
        );
    }

    #[test]
    fn byte_bits_lsb_first() {
        let v = decode_registers(IecType::Byte, &[0x0005], WordOrder::HighWordFirst).unwrap();
        assert_eq!(
            v,
            IoValue::BoolArray(vec![true, false, true, false, false, false, false, false])
        );
        // High byte is ignored.
        let v2 = decode_registers(IecType::Byte, &[0xAB05], WordOrder::HighWordFirst).unwrap();
        assert_eq!(v, v2);
    }

    #[test]
    fn byte_matches_shift_oracle_for_all_values() {
        for byte in 0u16..=255 {
            let IoValue::BoolArray(bits) =
                decode_registers(IecType::Byte, &[byte], WordOrder::HighWordFirst).unwrap()
            else {
                panic!("BYTE must decode to a bool array");
            };
            for (i, bit) in bits.iter().enumerate() {
                assert_eq!(*bit, (byte >> i) & 1 == 1, "byte {byte} bit {i}");
            }
        }
    }

    #[test]
    fn string_packing() {
        let t = IecType::String { len: 4 };
        assert_eq!(
            decode_registers(t, &[0x4142, 0x4300], WordOrder::HighWordFirst).unwrap(),
            IoValue::Text("ABC".into())
        );
        assert_eq!(
            encode_registers(t, &IoValue::Text("ABC".into()), WordOrder::HighWordFirst).unwrap(),
            vec![0x4142, 0x4300]
        );
        assert_eq!(
            encode_registers(t, &IoValue::Text("ABCDE".into()), WordOrder::HighWordFirst),
            Err(CodecError::TextTooLong {
                capacity: 4,
                actual: 5
            })
        );
        // Odd capacity: the trailing pad byte is never part of the text.
        let odd = IecType::String { len: 3 };
        assert_eq!(
            decode_registers(odd, &[0x4142, 0x4344], WordOrder::HighWordFirst).unwrap(),
            IoValue::Text("ABC".into())
        );
    }

    #[test]
    fn sint_uses_low_byte() {
        assert_eq!(
            encode_registers(IecType::Sint, &IoValue::Int8(-2), WordOrder::HighWordFirst).unwrap(),
            vec![0x00FE]
        );
        assert_eq!(
            decode_registers(IecType::Sint, &[0xFFFE], WordOrder::HighWordFirst).unwrap(),
            IoValue::Int8(-2)
        );
    }

    #[test]
    fn type_and_width_errors() {
        assert!(matches!(
            encode_registers(IecType::Lreal, &IoValue::Int16(0), WordOrder::HighWordFirst),
            Err(CodecError::TypeMismatch { .. })
        ));
        assert_eq!(
            decode_registers(IecType::Lreal, &[0, 0], WordOrder::HighWordFirst),
            Err(CodecError::WidthMismatch {
                expected: 4,
                actual: 2
            })
        );
    }

    #[test]
    fn bits() {
        assert_eq!(decode_bits(&[0x01], 1).unwrap(), vec![true]);
        assert_eq!(decode_bits(&[0x00], 8).unwrap(), vec![false; 8]);
        assert!(decode_bits(&[0x00, 0x00], 8).is_err());
        assert_eq!(pack_bits(&[true, false, true]), vec![0x05]);
    }

    #[test]
    fn type_names() {
        for t in IecType::FIXED {
            assert_eq!(IecType::from_name(t.name(), None).unwrap(), t);
        }
        assert_eq!(
            IecType::from_name("lreal", None).unwrap(),
            IecType::Lreal
        );
        assert_eq!(
            IecType::from_name("STRING", Some(8)).unwrap(),
            IecType::String { len: 8 }
        );
        assert!(IecType::from_name("STRING", None).is_err());
        assert_eq!(
            IecType::from_name("FLOAT", None),
            Err(CodecError::UnknownType("FLOAT".into()))
        );
    }

    #[test]
    fn json_forms() {
        assert_eq!(IoValue::Int64(-5).to_json(), Value::String("-5".into()));
        assert_eq!(IoValue::Float64(f64::NAN).to_json(), Value::String("NaN".into()));
        assert_eq!(
            IoValue::from_json(&Value::String("-5".into()), ValueType::Iec(IecType::Lint)).unwrap(),
            IoValue::Int64(-5)
        );
        assert_eq!(
            IoValue::from_json(&serde_json::json!(true), ValueType::Bool).unwrap(),
            IoValue::Bool(true)
        );
        assert!(matches!(
            IoValue::from_json(&serde_json::json!(300), ValueType::Iec(IecType::Sint)),
            Err(CodecError::OutOfRange { .. })
        ));
        assert!(matches!(
            IoValue::from_json(&serde_json::json!("x"), ValueType::Iec(IecType::Lreal)),
            Err(CodecError::TypeMismatch { .. })
        ));
        assert!(matches!(
            IoValue::from_json(&serde_json::json!(1), ValueType::Bool),
            Err(CodecError::TypeMismatch { .. })
        ));
    }
}
