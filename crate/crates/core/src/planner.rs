//! Coalescing of mapped addresses into range reads.
//!
//! Mappings of one table are sorted by offset and merged left to right: the
//! next mapping joins the current range when the unmapped gap in between is
//! at most `max_gap` items and the merged range still fits one request.
//! Greedy merging yields the fewest ranges for these two constraints.

use std::sync::Arc;

use thiserror::Error;

use crate::config::IoMapping;
use crate::wire::Table;

pub const DEFAULT_MAX_GAP_REGISTERS: u16 = 16;
pub const DEFAULT_MAX_GAP_BITS: u16 = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("'{first}' and '{second}' overlap in table {table}")]
    OverlappingMappings {
        table: Table,
        first: String,
        second: String,
    },
    #[error("'{io}' spans {width} items, more than one read of {limit} allows")]
    MappingTooWide { io: String, width: u16, limit: u16 },
    #[error("expected {expected} items, got {actual}")]
    WidthMismatch { expected: usize, actual: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlannerPolicy {
    /// Largest run of unmapped registers read and discarded to join two mappings.
    pub max_gap_registers: u16,
    /// Same for coils and discrete inputs.
    pub max_gap_bits: u16,
    /// Optional per-device cap below the protocol maximum.
    pub max_read_count: Option<u16>,
}

impl Default for PlannerPolicy {
    fn default() -> Self {
        PlannerPolicy {
            max_gap_registers: DEFAULT_MAX_GAP_REGISTERS,
            max_gap_bits: DEFAULT_MAX_GAP_BITS,
            max_read_count: None,
        }
    }
}

impl PlannerPolicy {
    /// Same gap for both kinds of table.
    pub fn with_max_gap(max_gap: u16) -> Self {
        PlannerPolicy {
            max_gap_registers: max_gap,
            max_gap_bits: max_gap,
            ..Default::default()
        }
    }

    pub fn max_gap(&self, table: Table) -> u32 {
        u32::from(if table.is_bit() {
            self.max_gap_bits
        } else {
            self.max_gap_registers
        })
    }

    pub fn limit(&self, table: Table) -> u16 {
        let protocol = table.max_read_count();
        self.max_read_count.map_or(protocol, |cap| cap.clamp(1, protocol))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RangeMember {
    pub mapping: Arc<IoMapping>,
    /// Offset of the mapping relative to the range start.
    pub relative_offset: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadRange {
    pub table: Table,
    pub start: u16,
    pub count: u16,
    pub members: Vec<RangeMember>,
}

/// Raw data returned by one range read.
#[derive(Debug, Clone, Copy)]
pub enum RawData<'a> {
    Bits(&'a [bool]),
    Words(&'a [u16]),
}

impl RawData<'_> {
    pub fn len(&self) -> usize {
        match self {
            RawData::Bits(b) => b.len(),
            RawData::Words(w) => w.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn slice(&self, start: usize, end: usize) -> Self {
        match self {
            RawData::Bits(b) => RawData::Bits(&b[start..end]),
            RawData::Words(w) => RawData::Words(&w[start..end]),
        }
    }
}

impl ReadRange {
    /// Hands each member exactly its window of `raw`; filler is dropped.
    pub fn extract<'a>(&self, raw: RawData<'a>) -> Result<Vec<(&Arc<IoMapping>, RawData<'a>)>, PlanError> {
        if raw.len() != self.count as usize {
            return Err(PlanError::WidthMismatch {
                expected: self.count as usize,
                actual: raw.len(),
            });
        }
        Ok(self
            .members
            .iter()
            .map(|m| {
                let start = m.relative_offset as usize;
                (&m.mapping, raw.slice(start, start + m.mapping.width as usize))
            })
            .collect())
    }

    pub fn end(&self) -> u32 {
        u32::from(self.start) + u32::from(self.count)
    }
}

/// Coalesced reads for a device, ordered by table then start address.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReadPlan {
    pub ranges: Vec<ReadRange>,
}

impl ReadPlan {
    pub fn for_table(&self, table: Table) -> impl Iterator<Item = &ReadRange> {
        self.ranges.iter().filter(move |r| r.table == table)
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }
}

pub fn plan(mappings: &[Arc<IoMapping>], policy: &PlannerPolicy) -> Result<ReadPlan, PlanError> {
    let mut ranges = Vec::new();
    for table in Table::ALL {
        let mut sorted: Vec<&Arc<IoMapping>> = mappings.iter().filter(|m| m.table == table).collect();
        sorted.sort_by_key(|m| (m.offset, m.io_name.clone()));
        for pair in sorted.windows(2) {
            if pair[0].window().1 > pair[1].window().0 {
                return Err(PlanError::OverlappingMappings {
                    table,
                    first: pair[0].io_name.clone(),
                    second: pair[1].io_name.clone(),
                });
            }
        }

        let limit = u32::from(policy.limit(table));
        let max_gap = policy.max_gap(table);
        let mut current: Option<(u32, u32, Vec<&Arc<IoMapping>>)> = None;
        for m in sorted {
            let (start, end) = m.window();
            if end - start > limit {
                return Err(PlanError::MappingTooWide {
                    io: m.io_name.clone(),
                    width: m.width,
                    limit: limit as u16,
                });
            }
            current = match current.take() {
                Some((rs, re, mut members)) if start - re <= max_gap && end - rs <= limit => {
                    members.push(m);
                    Some((rs, end, members))
                }
                Some(done) => {
                    ranges.push(build_range(table, done));
                    Some((start, end, vec![m]))
                }
                None => Some((start, end, vec![m])),
            };
        }
        if let Some(done) = current {
            ranges.push(build_range(table, done));
        }
    }
    Ok(ReadPlan { ranges })
}

fn build_range(table: Table, (start, end, members): (u32, u32, Vec<&Arc<IoMapping>>)) -> ReadRange {
    ReadRange {
        table,
        start: start as u16,
        count: (end - start) as u16,
        members: members
            .into_iter()
            .map(|m| RangeMember {
                relative_offset: (u32::from(m.offset) - start) as u16,
                mapping: Arc::clone(m),
            })
            .collect(),
    }
}
