//! Desk-scale laboratory for volumetric (3D) frame streaming latency.
//!
//! A sender emits synthetic volumetric frames at a fixed cadence, a sync
//! server (relay) replicates them to one or more receivers, and every hop runs
//! a frame-oriented reliable-datagram transport with fixed-rate pacing and
//! NACK-driven retransmission. Latency is measured at three layers:
//!
//! * application: `Service(L) = App(Tx) + Frame(L) + App(Rx)`
//! * transport protocol, per hop: `Protocol(L) = Network(L) + Protocol(Rx)`
//! * network, per packet: kernel / NIC / wire stage decomposition
//!
//! The same endpoint state machines run under a deterministic discrete-event
//! simulation ([`sim`]) and over real UDP sockets ([`socket`]).

pub mod app;
pub mod clocksync;
pub mod config;
pub mod frame;
pub mod metrics;
pub mod netem;
pub mod relay;
pub mod rng;
pub mod sim;
pub mod socket;
pub mod time;
pub mod transport;

pub use config::ScenarioConfig;
pub use frame::{DataPacket, Segment, VolumetricFrame};
pub use metrics::{FrameLatencyRecord, RunSummary};
