//! One device, the bus and the NDJSON listener wired together.

use std::net::SocketAddr;

use thiserror::Error;
use tokio::task::JoinHandle;

use crate::bus::{Bus, TopicRemap, DEFAULT_QUEUE_DEPTH};
use crate::config::DeviceConfig;
use crate::device::{Device, DeviceError, DeviceHandle, DeviceOptions};
use crate::ndjson::{NdjsonServer, DEFAULT_LISTEN};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error("cannot reach {address}:{port}: {source}")]
    Connect {
        address: String,
        port: u16,
        source: std::io::Error,
    },
    #[error("cannot listen on {addr}: {source}")]
    Listen { addr: String, source: std::io::Error },
}

#[derive(Debug, Clone)]
pub struct GatewayOptions {
    /// NDJSON listener; `None` keeps the bus in-process only.
    pub listen: Option<String>,
    pub device: DeviceOptions,
    pub queue_depth: usize,
    pub remaps: Vec<TopicRemap>,
    /// Fail startup when the first connection attempt fails.
    pub require_connection: bool,
}

impl Default for GatewayOptions {
    fn default() -> Self {
        GatewayOptions {
            listen: Some(DEFAULT_LISTEN.to_string()),
            device: DeviceOptions::default(),
            queue_depth: DEFAULT_QUEUE_DEPTH,
            remaps: Vec::new(),
            require_connection: true,
        }
    }
}

pub struct Gateway {
    bus: Bus,
    config: DeviceConfig,
    device: DeviceHandle,
    poller: JoinHandle<()>,
    server: Option<NdjsonServer>,
}

impl Gateway {
    pub async fn start(config: DeviceConfig, options: GatewayOptions) -> Result<Gateway, GatewayError> {
        let bus = Bus::new(options.queue_depth);
        Self::start_on(bus, config, options).await
    }

    /// Starts on an existing bus, so subscriptions made beforehand see the
    /// first poll. `options.queue_depth` is not used.
    pub async fn start_on(bus: Bus, mut config: DeviceConfig, options: GatewayOptions) -> Result<Gateway, GatewayError> {
        config.apply_remaps(&options.remaps);
        let mut device = Device::new(config.clone(), options.device, bus.clone())?;
        if let Err(source) = device.connect().await {
            if options.require_connection {
                return Err(GatewayError::Connect {
                    address: config.address.clone(),
                    port: config.port,
                    source,
                });
            }
        }
        let server = match &options.listen {
            Some(addr) => Some(
                NdjsonServer::bind(addr, bus.clone())
                    .await
                    .map_err(|source| GatewayError::Listen {
                        addr: addr.clone(),
                        source,
                    })?,
            ),
            None => None,
        };
        let (handle, poller) = device.spawn();
        Ok(Gateway {
            bus,
            config,
            device: handle,
            poller,
            server,
        })
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    /// The device config after remapping.
    pub fn config(&self) -> &DeviceConfig {
        &self.config
    }

    pub fn device(&self) -> &DeviceHandle {
        &self.device
    }

    pub fn listen_addr(&self) -> Option<SocketAddr> {
        self.server.as_ref().map(NdjsonServer::local_addr)
    }

    /// Stops polling and the listener, and waits for the poll loop to end.
    pub async fn shutdown(self) {
        if let Some(server) = self.server {
            server.shutdown();
        }
        self.device.shutdown();
        let _ = self.poller.await;
    }
}
