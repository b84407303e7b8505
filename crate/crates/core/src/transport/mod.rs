//! Endpoint state machines of the frame-oriented reliable-datagram protocol.
//!
//! Both endpoints are sans-IO: the caller feeds them packets and the current
//! local time, asks when they next want to run, and carries whatever they
//! emit. The simulator and the socket driver use the same code.
//!
//! Reliability is receiver-driven. A receiver NACKs holes that persist for
//! `nack_delay`, and NACKs everything still missing (including an unknown
//! tail) once a frame has been idle for `tail_timeout`. Retransmissions go out
//! ahead of first transmissions under the same pacer.

mod pacer;
mod receiver;
mod sender;

pub use pacer::{Emission, Pacer};
pub use receiver::{
    AbandonReason, CompletedFrame, ReceiveLogEntry, ReceivedSegment, ReceiverConfig, ReceiverCounters,
    ReceiverEndpoint, RxEvent,
};
pub use sender::{Outgoing, SendLogEntry, SenderConfig, SenderCounters, SenderEndpoint};

use thiserror::Error;

use crate::frame::FrameError;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("emission channel closed")]
    Closed,
    #[error("frame of {bytes} bytes exceeds the configured maximum of {max}")]
    Oversize { bytes: usize, max: usize },
    #[error("frame {0} already submitted")]
    DuplicateFrame(u32),
    #[error(transparent)]
    Frame(#[from] FrameError),
}
