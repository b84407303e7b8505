use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::pacer::Pacer;
use super::TransportError;
use crate::frame::{
    packetize_segment, segment_frame, DataPacket, NackRange, Segment, VolumetricFrame, DEFAULT_PACKET_PAYLOAD,
    DEFAULT_SEGMENT_PAYLOAD,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SenderConfig {
    pub stream_id: u8,
    pub pacing_rate_bps: u64,
    pub segment_payload_size: usize,
    pub packet_payload_size: usize,
    /// Extra framing bits charged per packet (UDP/IP/Ethernet when modeled).
    pub overhead_bits: u64,
    /// Frames kept for retransmission.
    pub retention_window: usize,
    pub max_frame_bytes: usize,
}

impl Default for SenderConfig {
    fn default() -> Self {
        Self {
            stream_id: 0,
            pacing_rate_bps: 2_000_000_000,
            segment_payload_size: DEFAULT_SEGMENT_PAYLOAD,
            packet_payload_size: DEFAULT_PACKET_PAYLOAD,
            overhead_bits: 0,
            retention_window: 8,
            max_frame_bytes: 16_000_000,
        }
    }
}

/// Per-frame transmit record.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SendLogEntry {
    pub frame_id: u32,
    /// When the frame (or its first segment) was handed to the transport.
    pub handoff_ts: u64,
    /// Start of the first packet's emission; the timestamp embedded in it.
    pub first_packet_send_ts: Option<u64>,
    /// End of the latest packet emission of this frame.
    pub last_packet_send_ts: Option<u64>,
    /// First transmissions.
    pub packet_count: u32,
    pub retransmit_count: u32,
    pub ack_ts: Option<u64>,
}

impl SendLogEntry {
    /// Protocol(Tx): first emission start to last emission end.
    pub fn protocol_tx(&self) -> Option<u64> {
        Some(self.last_packet_send_ts? - self.first_packet_send_ts?)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SenderCounters {
    pub packets_sent: u64,
    pub first_transmissions: u64,
    pub retransmissions: u64,
    pub nacks_received: u64,
    pub stale_nacks: u64,
    /// Queued packets dropped because their frame left the retention window.
    pub evicted_unsent: u64,
}

/// A packet leaving the sender, already stamped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outgoing {
    pub packet: DataPacket,
    pub start: u64,
    pub end: u64,
    pub wire_bits: u64,
    pub retransmit: bool,
}

#[derive(Debug, Clone, Copy, Default)]
struct PacketState {
    emitted: bool,
    rtx_queued: bool,
}

struct RetainedFrame {
    frame_id: u32,
    packets: Vec<DataPacket>,
    state: Vec<PacketState>,
}

impl RetainedFrame {
    fn find(&self, pos: crate::frame::PacketPos) -> usize {
        self.packets.partition_point(|p| p.pos() < pos)
    }
}

#[derive(Debug, Clone, Copy)]
struct Queued {
    frame_id: u32,
    index: usize,
    release_at: u64,
}

/// Paced sending side of one stream.
pub struct SenderEndpoint {
    cfg: SenderConfig,
    pacer: Pacer,
    queue: VecDeque<Queued>,
    rtx: VecDeque<Queued>,
    retained: VecDeque<RetainedFrame>,
    log: BTreeMap<u32, SendLogEntry>,
    counters: SenderCounters,
    closed: bool,
}

impl SenderEndpoint {
    pub fn new(cfg: SenderConfig) -> Self {
        let pacer = Pacer::new(cfg.pacing_rate_bps);
        Self {
            cfg,
            pacer,
            queue: VecDeque::new(),
            rtx: VecDeque::new(),
            retained: VecDeque::new(),
            log: BTreeMap::new(),
            counters: SenderCounters::default(),
            closed: false,
        }
    }

    pub fn config(&self) -> &SenderConfig {
        &self.cfg
    }

    pub fn counters(&self) -> SenderCounters {
        self.counters
    }

    pub fn log(&self, frame_id: u32) -> Option<&SendLogEntry> {
        self.log.get(&frame_id)
    }

    pub fn logs(&self) -> impl Iterator<Item = &SendLogEntry> {
        self.log.values()
    }

    /// Packets waiting for their first transmission or a retransmission.
    pub fn backlog(&self) -> usize {
        self.queue.len() + self.rtx.len()
    }

    pub fn close(&mut self) {
        self.closed = true;
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    fn wire_bits(&self, p: &DataPacket) -> u64 {
        p.payload.len() as u64 * 8 + self.cfg.overhead_bits
    }

    fn retained_mut(&mut self, frame_id: u32) -> Option<&mut RetainedFrame> {
        self.retained.iter_mut().find(|f| f.frame_id == frame_id)
    }

    fn retain(&mut self, frame_id: u32) {
        self.retained.push_back(RetainedFrame { frame_id, packets: Vec::new(), state: Vec::new() });
        while self.retained.len() > self.cfg.retention_window.max(1) {
            self.retained.pop_front();
        }
    }

    /// Queues a whole frame for paced transmission.
    pub fn submit_frame(&mut self, frame: &VolumetricFrame, now: u64) -> Result<(), TransportError> {
        if self.closed {
            return Err(TransportError::Closed);
        }
        if frame.len() > self.cfg.max_frame_bytes {
            return Err(TransportError::Oversize { bytes: frame.len(), max: self.cfg.max_frame_bytes });
        }
        if self.log.contains_key(&frame.frame_id()) {
            return Err(TransportError::DuplicateFrame(frame.frame_id()));
        }
        let segments = segment_frame(frame, self.cfg.segment_payload_size)?;
        for seg in &segments {
            self.submit_segment(seg.frame_id, seg.segment_index, seg.is_last(), seg.payload.clone(), now, now)?;
        }
        Ok(())
    }

    /// Queues one segment. Segments of a frame must arrive in index order;
    /// the first one opens the frame. Packets are held until `release_at`.
    pub fn submit_segment(
        &mut self,
        frame_id: u32,
        segment_index: u16,
        is_last: bool,
        payload: bytes::Bytes,
        now: u64,
        release_at: u64,
    ) -> Result<(), TransportError> {
        if self.closed {
            return Err(TransportError::Closed);
        }
        let seg = Segment {
            frame_id,
            segment_index,
            segment_count: if is_last { segment_index } else { segment_index.saturating_add(1) },
            payload,
        };
        let packets = packetize_segment(&seg, self.cfg.packet_payload_size, self.cfg.stream_id)?;
        if let Entry::Vacant(e) = self.log.entry(frame_id) {
            e.insert(SendLogEntry { frame_id, handoff_ts: now, ..Default::default() });
            self.retain(frame_id);
        }
        let Some(frame) = self.retained_mut(frame_id) else {
            // already evicted; nothing can be sent for it
            return Ok(());
        };
        let base = frame.packets.len();
        let n = packets.len();
        frame.packets.extend(packets);
        frame.state.extend(std::iter::repeat_n(PacketState::default(), n));
        self.queue.extend((base..base + n).map(|index| Queued { frame_id, index, release_at }));
        Ok(())
    }

    /// Earliest local time at which [`poll_transmit`](Self::poll_transmit)
    /// can emit something, if anything is queued.
    pub fn next_transmit_at(&self) -> Option<u64> {
        let head = if !self.rtx.is_empty() { 0 } else { self.queue.front()?.release_at };
        Some(head.max(self.pacer.available_at()))
    }

    /// Emits the next packet if the pacer and hold times allow it at `now`.
    pub fn poll_transmit(&mut self, now: u64) -> Option<Outgoing> {
        if self.closed || self.pacer.available_at() > now {
            return None;
        }
        loop {
            let (item, retransmit) = if let Some(q) = self.rtx.pop_front() {
                (q, true)
            } else {
                let head = self.queue.front()?;
                if head.release_at > now {
                    return None;
                }
                (self.queue.pop_front().unwrap(), false)
            };
            let Some(frame) = self.retained.iter_mut().find(|f| f.frame_id == item.frame_id) else {
                self.counters.evicted_unsent += 1;
                continue;
            };
            let mut packet = frame.packets[item.index].clone();
            let state = &mut frame.state[item.index];
            state.emitted = true;
            state.rtx_queued = false;
            packet.flags.set_retransmit(retransmit);

            let wire_bits = self.wire_bits(&packet);
            let em = self.pacer.emit(now, wire_bits);
            packet.send_timestamp = em.start;

            let entry = self.log.get_mut(&item.frame_id).expect("retained frame has a log entry");
            entry.first_packet_send_ts.get_or_insert(em.start);
            entry.last_packet_send_ts = Some(entry.last_packet_send_ts.map_or(em.end, |t| t.max(em.end)));
            self.counters.packets_sent += 1;
            if retransmit {
                entry.retransmit_count += 1;
                self.counters.retransmissions += 1;
            } else {
                entry.packet_count += 1;
                self.counters.first_transmissions += 1;
            }
            return Some(Outgoing { packet, start: em.start, end: em.end, wire_bits, retransmit });
        }
    }

    /// Queues retransmissions for every already-emitted packet covered by
    /// `ranges`. Returns how many were queued; zero (and a stale count) when
    /// the frame has left the retention window.
    pub fn retransmit(&mut self, frame_id: u32, ranges: &[NackRange]) -> usize {
        self.counters.nacks_received += 1;
        let Some(frame) = self.retained.iter_mut().find(|f| f.frame_id == frame_id) else {
            self.counters.stale_nacks += 1;
            return 0;
        };
        let mut queued = 0;
        for r in ranges {
            let mut i = frame.find(r.start);
            while i < frame.packets.len() && frame.packets[i].pos() <= r.end {
                let st = &mut frame.state[i];
                if st.emitted && !st.rtx_queued {
                    st.rtx_queued = true;
                    self.rtx.push_back(Queued { frame_id, index: i, release_at: 0 });
                    queued += 1;
                }
                i += 1;
            }
        }
        queued
    }

    pub fn on_frame_ack(&mut self, frame_id: u32, now: u64) {
        if let Some(e) = self.log.get_mut(&frame_id) {
            e.ack_ts.get_or_insert(now);
        }
    }
}
