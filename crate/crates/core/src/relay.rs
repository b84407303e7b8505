//! The sync server: one upstream receiver fanned out to per-receiver paced
//! senders.

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use crate::app::DurationDist;
use crate::frame::{ControlBody, ControlPacket, DataPacket};
use crate::metrics::DistributionEntry;
use crate::rng::{self, StreamRng};
use crate::transport::{
    AbandonReason, Outgoing, ReceiverConfig, ReceiverEndpoint, RxEvent, SenderConfig, SenderEndpoint, TransportError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ForwardPolicy {
    /// Forward each segment as soon as it and all earlier ones are complete.
    #[default]
    CutThrough,
    /// Forward only once the whole frame is complete.
    StoreAndForward,
}

impl std::str::FromStr for ForwardPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cut-through" => Ok(Self::CutThrough),
            "store-and-forward" => Ok(Self::StoreAndForward),
            _ => Err(format!("unknown forwarding policy {s:?}")),
        }
    }
}

impl std::fmt::Display for ForwardPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::CutThrough => "cut-through",
            Self::StoreAndForward => "store-and-forward",
        })
    }
}

/// Injected processing stalls: with `probability`, a frame's forwarding is
/// held back by a duration drawn from `duration`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StallModel {
    pub probability: f64,
    pub duration: DurationDist,
}

impl StallModel {
    pub fn off() -> Self {
        Self { probability: 0.0, duration: DurationDist::Fixed(0) }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RelayError {
    #[error("stall probability must be in [0,1], got {0}")]
    StallProbability(f64),
    #[error("stall duration range is inverted")]
    StallDuration,
    #[error("relay needs at least one downstream receiver")]
    NoDownstream,
    #[error(transparent)]
    Transport(#[from] TransportError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelayConfig {
    pub policy: ForwardPolicy,
    /// Fixed handling time added before a segment is queued downstream.
    pub processing_delay: u64,
    /// Downstream backlog (packets) above which a backpressure event counts.
    pub high_water: usize,
    pub upstream: ReceiverConfig,
    pub downstream: Vec<SenderConfig>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RelayCounters {
    pub frames_forwarded: u64,
    pub segments_forwarded: u64,
    pub stalled_frames: u64,
    pub backpressure_events: u64,
    pub upstream_abandoned: u64,
}

/// Effects the caller has to carry out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RelayEvent {
    /// Control packet for the upstream sender (NACK or FRAME_ACK).
    ToUpstream(ControlPacket),
    /// Segments were queued on every downstream sender.
    Forwarded {
        frame_id: u32,
    },
    UpstreamAbandoned {
        frame_id: u32,
        reason: AbandonReason,
    },
}

struct FrameProgress {
    stall: u64,
    stalled: bool,
    upstream_complete_ts: Option<u64>,
}

pub struct RelayNode {
    cfg: RelayConfig,
    upstream: ReceiverEndpoint,
    downstream: Vec<SenderEndpoint>,
    stall: StallModel,
    stall_rng: StreamRng,
    frames: BTreeMap<u32, FrameProgress>,
    counters: RelayCounters,
}

impl RelayNode {
    pub fn new(cfg: RelayConfig, seed: u64) -> Result<Self, RelayError> {
        if cfg.downstream.is_empty() {
            return Err(RelayError::NoDownstream);
        }
        let mut upstream_cfg = cfg.upstream.clone();
        upstream_cfg.emit_segments = cfg.policy == ForwardPolicy::CutThrough;
        Ok(Self {
            upstream: ReceiverEndpoint::new(upstream_cfg),
            downstream: cfg.downstream.iter().cloned().map(SenderEndpoint::new).collect(),
            cfg,
            stall: StallModel::off(),
            stall_rng: rng::stream(seed, "stall", 0),
            frames: BTreeMap::new(),
            counters: RelayCounters::default(),
        })
    }

    /// Enables (or replaces) the stall model for subsequent forwards.
    pub fn inject_stall(&mut self, model: StallModel) -> Result<(), RelayError> {
        if !(0.0..=1.0).contains(&model.probability) {
            return Err(RelayError::StallProbability(model.probability));
        }
        if !model.duration.is_valid() {
            return Err(RelayError::StallDuration);
        }
        self.stall = model;
        Ok(())
    }

    pub fn config(&self) -> &RelayConfig {
        &self.cfg
    }

    pub fn counters(&self) -> RelayCounters {
        self.counters
    }

    pub fn upstream(&self) -> &ReceiverEndpoint {
        &self.upstream
    }

    pub fn downstream(&self, i: usize) -> &SenderEndpoint {
        &self.downstream[i]
    }

    pub fn downstream_count(&self) -> usize {
        self.downstream.len()
    }

    /// Distribution record of a frame towards receiver `i`, once the frame
    /// was complete upstream and has been sent downstream.
    pub fn distribution(&self, frame_id: u32, i: usize) -> Option<DistributionEntry> {
        let p = self.frames.get(&frame_id)?;
        let log = self.downstream[i].log(frame_id)?;
        Some(DistributionEntry {
            frame_id,
            upstream_complete_ts: p.upstream_complete_ts?,
            forward_start_ts: log.first_packet_send_ts?,
            forward_end_ts: log.last_packet_send_ts?,
            stalled: p.stalled,
        })
    }

    fn progress(&mut self, frame_id: u32) -> &mut FrameProgress {
        let stall = self.stall;
        let rng = &mut self.stall_rng;
        let counters = &mut self.counters;
        self.frames.entry(frame_id).or_insert_with(|| {
            let stalled = stall.probability > 0.0 && rng.gen::<f64>() < stall.probability;
            let d = if stalled { stall.duration.sample(rng) } else { 0 };
            if stalled {
                counters.stalled_frames += 1;
            }
            FrameProgress { stall: d, stalled, upstream_complete_ts: None }
        })
    }

    fn forward(
        &mut self,
        frame_id: u32,
        segment_index: u16,
        is_last: bool,
        payload: bytes::Bytes,
        now: u64,
    ) -> Result<(), RelayError> {
        let stall = self.progress(frame_id).stall;
        let release_at = now + self.cfg.processing_delay + stall;
        for ds in &mut self.downstream {
            ds.submit_segment(frame_id, segment_index, is_last, payload.clone(), now, release_at)?;
            if ds.backlog() > self.cfg.high_water {
                self.counters.backpressure_events += 1;
            }
        }
        self.counters.segments_forwarded += 1;
        if is_last {
            self.counters.frames_forwarded += 1;
        }
        Ok(())
    }

    fn handle(&mut self, events: Vec<RxEvent>, now: u64, out: &mut Vec<RelayEvent>) -> Result<(), RelayError> {
        for ev in events {
            match ev {
                RxEvent::SegmentComplete(seg) => {
                    self.forward(seg.frame_id, seg.segment_index, seg.is_last, seg.payload, now)?;
                    if seg.is_last {
                        out.push(RelayEvent::Forwarded { frame_id: seg.frame_id });
                    }
                }
                RxEvent::FrameComplete(done) => {
                    self.progress(done.frame_id).upstream_complete_ts = Some(now);
                    if self.cfg.policy == ForwardPolicy::StoreAndForward {
                        let size = self.cfg.downstream[0].segment_payload_size;
                        let n = done.payload.len().div_ceil(size);
                        for (i, chunk) in
                            (0..n).map(|i| (i, done.payload.slice(i * size..((i + 1) * size).min(done.payload.len()))))
                        {
                            self.forward(done.frame_id, (i + 1) as u16, i + 1 == n, chunk, now)?;
                        }
                        out.push(RelayEvent::Forwarded { frame_id: done.frame_id });
                    }
                    out.push(RelayEvent::ToUpstream(self.upstream.frame_ack(done.frame_id, now)));
                }
                RxEvent::NackEmitted(nack) => out.push(RelayEvent::ToUpstream(nack)),
                RxEvent::FrameAbandoned { frame_id, reason } => {
                    self.counters.upstream_abandoned += 1;
                    out.push(RelayEvent::UpstreamAbandoned { frame_id, reason });
                }
                RxEvent::Stored | RxEvent::Duplicate | RxEvent::Expired | RxEvent::Rejected => {}
            }
        }
        Ok(())
    }

    pub fn on_upstream_packet(&mut self, packet: DataPacket, now: u64) -> Result<Vec<RelayEvent>, RelayError> {
        let events = self.upstream.on_packet(packet, now);
        let mut out = Vec::new();
        self.handle(events, now, &mut out)?;
        Ok(out)
    }

    pub fn on_timer(&mut self, now: u64) -> Result<Vec<RelayEvent>, RelayError> {
        let events = self.upstream.on_timer(now);
        let mut out = Vec::new();
        self.handle(events, now, &mut out)?;
        Ok(out)
    }

    pub fn next_timer_at(&self) -> Option<u64> {
        self.upstream.next_timer_at()
    }

    /// Control packet from receiver `i`.
    pub fn on_downstream_control(&mut self, i: usize, packet: &ControlPacket, now: u64) {
        let ds = &mut self.downstream[i];
        match &packet.body {
            ControlBody::Nack(ranges) => {
                ds.retransmit(packet.frame_id, ranges);
            }
            ControlBody::FrameAck => ds.on_frame_ack(packet.frame_id, now),
            ControlBody::SyncReq { .. } | ControlBody::SyncResp { .. } => {}
        }
    }

    pub fn next_transmit_at(&self, i: usize) -> Option<u64> {
        self.downstream[i].next_transmit_at()
    }

    pub fn poll_transmit(&mut self, i: usize, now: u64) -> Option<Outgoing> {
        self.downstream[i].poll_transmit(now)
    }
}
