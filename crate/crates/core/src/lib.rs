//! Modbus/TCP IO gateway.
//!
//! Polls one Modbus/TCP slave according to a YAML or JSON register map,
//! decodes each configured IO as an IEC 61131-3 typed value and publishes it
//! on an in-process topic bus, which is also reachable as newline-delimited
//! JSON over TCP. Messages published on an output's `/write` topic are
//! written back to the slave.
//!
//! | module | |
//! |---|---|
//! | [`wire`] | MBAP/PDU encoding, decoding and stream reassembly |
//! | [`codec`] | IEC 61131-3 values to and from register words |
//! | [`config`] | device configuration files |
//! | [`planner`] | coalescing of mapped addresses into range reads |
//! | [`device`] | the polling, writing Modbus client |
//! | [`bus`], [`ndjson`] | topics, in-process and over TCP |
//! | [`gateway`] | device plus bus plus listener |
//! | [`sim`] | a Modbus/TCP slave simulator |
//! | [`bench`] | loopback latency measurement |

pub mod bench;
pub mod bus;
pub mod clock;
pub mod codec;
pub mod config;
pub mod device;
pub mod gateway;
pub mod ndjson;
pub mod planner;
pub mod sim;
pub mod wire;

pub use bus::{Bus, TopicMessage, TopicPattern, TopicRemap};
pub use codec::{IecType, IoValue, ValueType, WordOrder};
pub use config::{load_config, parse_config, ConfigFormat, DeviceConfig, IoMapping};
pub use device::{Device, DeviceHandle, DeviceOptions};
pub use gateway::{Gateway, GatewayOptions};
pub use planner::{plan, PlannerPolicy, ReadPlan};
pub use sim::{FaultPolicy, SlaveMemory, Simulator};
pub use wire::{Request, Response, Table};
