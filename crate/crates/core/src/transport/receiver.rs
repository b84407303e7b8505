use std::collections::{BTreeMap, HashMap};

use bytes::{Bytes, BytesMut};
use serde::{Deserialize, Serialize};

use crate::frame::{ControlBody, ControlPacket, DataPacket, NackRange, PacketPos, MAX_NACK_RANGES};
use crate::time::MS;

/// Placeholder frames opened for skipped ids are capped so that a corrupt
/// frame id cannot allocate unbounded state.
const MAX_SKIPPED_FRAMES: u32 = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverConfig {
    /// Only packets of this stream are accepted; `None` accepts any.
    pub stream_id: Option<u8>,
    /// How long a hole below the highest received position may persist
    /// before it is NACKed.
    pub nack_delay: u64,
    /// Idle time after which everything still missing is NACKed.
    pub tail_timeout: u64,
    /// NACK rounds before a frame is abandoned. Only enforced together with a
    /// deadline; an unbounded deadline means unbounded rounds.
    pub max_nack_rounds: u32,
    /// Time after a frame's first packet by which it must complete.
    pub deadline: Option<u64>,
    /// Emit [`RxEvent::SegmentComplete`] for in-order completed segments.
    pub emit_segments: bool,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        Self {
            stream_id: None,
            nack_delay: 2 * MS,
            tail_timeout: 5 * MS,
            max_nack_rounds: 3,
            deadline: Some(66_600_000),
            emit_segments: false,
        }
    }
}

/// Per-frame receive record, in the receiver's local clock.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceiveLogEntry {
    pub frame_id: u32,
    pub first_recv_ts: Option<u64>,
    pub last_recv_ts: Option<u64>,
    /// Send timestamp carried by the first packet received.
    pub embedded_first_ts: Option<u64>,
    pub nack_count: u32,
    pub packets: u32,
    pub completed: bool,
}

impl ReceiveLogEntry {
    /// Protocol(Rx) / Frame(Rx): first to last packet arrival.
    pub fn receive_span(&self) -> Option<u64> {
        Some(self.last_recv_ts? - self.first_recv_ts?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletedFrame {
    pub frame_id: u32,
    pub payload: Bytes,
    pub log: ReceiveLogEntry,
}

/// A segment whose predecessors are all complete.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceivedSegment {
    pub frame_id: u32,
    pub segment_index: u16,
    pub is_last: bool,
    pub payload: Bytes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbandonReason {
    Deadline,
    NackRounds,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RxEvent {
    Stored,
    Duplicate,
    /// The packet belongs to a frame already abandoned; counted and dropped.
    Expired,
    /// Wrong stream, or inconsistent with what was already received.
    Rejected,
    SegmentComplete(ReceivedSegment),
    FrameComplete(CompletedFrame),
    NackEmitted(ControlPacket),
    FrameAbandoned {
        frame_id: u32,
        reason: AbandonReason,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReceiverCounters {
    pub packets_received: u64,
    pub duplicates: u64,
    pub expired_packets: u64,
    pub rejected: u64,
    pub frames_completed: u64,
    pub frames_abandoned: u64,
    pub nacks_sent: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Finished {
    Completed,
    Abandoned,
}

struct PartialSegment {
    packets_in_segment: u16,
    parts: Vec<Option<Bytes>>,
    received: u16,
}

impl PartialSegment {
    fn complete(&self) -> bool {
        self.received == self.packets_in_segment
    }

    fn assemble(&self) -> Bytes {
        let len = self.parts.iter().flatten().map(|p| p.len()).sum();
        let mut buf = BytesMut::with_capacity(len);
        for p in self.parts.iter().flatten() {
            buf.extend_from_slice(p);
        }
        buf.freeze()
    }
}

struct PartialFrame {
    segments: Vec<Option<PartialSegment>>,
    last_segment: Option<u16>,
    complete_segments: u16,
    /// Segments `1..=forwarded` have been emitted as `SegmentComplete`.
    forwarded: u16,
    /// Highest position received so far.
    frontier: Option<PacketPos>,
    gap_since: Option<u64>,
    /// Holes below this position have already been NACKed once.
    nacked_to: Option<PacketPos>,
    /// Tail-timeout NACKs, i.e. re-requests of everything still missing.
    repair_rounds: u32,
    last_activity: u64,
    deadline_at: Option<u64>,
    log: ReceiveLogEntry,
}

impl PartialFrame {
    fn new(frame_id: u32, now: u64, deadline: Option<u64>) -> Self {
        Self {
            segments: Vec::new(),
            last_segment: None,
            complete_segments: 0,
            forwarded: 0,
            frontier: None,
            gap_since: None,
            nacked_to: None,
            repair_rounds: 0,
            last_activity: now,
            deadline_at: deadline.map(|d| now + d),
            log: ReceiveLogEntry { frame_id, ..Default::default() },
        }
    }

    fn segment(&self, index: u16) -> Option<&PartialSegment> {
        self.segments.get(index as usize - 1)?.as_ref()
    }

    fn successor(&self, pos: PacketPos) -> PacketPos {
        match self.segment(pos.segment) {
            Some(s) if pos.seq < s.packets_in_segment => PacketPos::new(pos.segment, pos.seq + 1),
            _ => PacketPos::new(pos.segment.saturating_add(1), 1),
        }
    }

    fn is_complete(&self) -> bool {
        self.last_segment == Some(self.complete_segments) && self.complete_segments > 0
    }

    /// Missing positions at or above `from`. With `limit`, only those strictly
    /// below it; without, everything including an unknown tail.
    fn missing(&self, from: Option<PacketPos>, limit: Option<PacketPos>) -> Vec<NackRange> {
        let mut out = Vec::new();
        let known_max = self.segments.len() as u16;
        let upper = match (limit, self.last_segment) {
            (Some(l), _) => l.segment.min(known_max),
            (None, Some(last)) => last,
            (None, None) => known_max,
        };
        let below = |p: PacketPos| limit.is_none_or(|l| p < l) && from.is_none_or(|f| p >= f);
        for s in 1..=upper {
            match self.segment(s) {
                Some(seg) => {
                    let mut run: Option<(u16, u16)> = None;
                    for q in 1..=seg.packets_in_segment {
                        let missing = seg.parts[q as usize - 1].is_none() && below(PacketPos::new(s, q));
                        match (missing, run) {
                            (true, None) => run = Some((q, q)),
                            (true, Some((a, _))) => run = Some((a, q)),
                            (false, Some((a, b))) => {
                                out.push(NackRange::within(s, a, b));
                                run = None;
                            }
                            (false, None) => {}
                        }
                    }
                    if let Some((a, b)) = run {
                        out.push(NackRange::within(s, a, b));
                    }
                }
                None if below(PacketPos::new(s, 1)) && limit.is_none_or(|l| s < l.segment) => {
                    out.push(NackRange::within(s, 1, u16::MAX));
                }
                None => {}
            }
        }
        if limit.is_none() && self.last_segment.is_none() && known_max < u16::MAX {
            out.push(NackRange::new(PacketPos::new(known_max + 1, 1), PacketPos::END));
        }
        out
    }
}

/// Receiving side of one stream: reassembly, gap detection, receive logs.
pub struct ReceiverEndpoint {
    cfg: ReceiverConfig,
    open: BTreeMap<u32, PartialFrame>,
    finished: HashMap<u32, Finished>,
    highest_seen: Option<u32>,
    logs: BTreeMap<u32, ReceiveLogEntry>,
    counters: ReceiverCounters,
}

impl ReceiverEndpoint {
    pub fn new(cfg: ReceiverConfig) -> Self {
        Self {
            cfg,
            open: BTreeMap::new(),
            finished: HashMap::new(),
            highest_seen: None,
            logs: BTreeMap::new(),
            counters: ReceiverCounters::default(),
        }
    }

    pub fn config(&self) -> &ReceiverConfig {
        &self.cfg
    }

    pub fn counters(&self) -> ReceiverCounters {
        self.counters
    }

    /// Logs of finished frames (completed or abandoned).
    pub fn log(&self, frame_id: u32) -> Option<&ReceiveLogEntry> {
        self.logs.get(&frame_id)
    }

    pub fn logs(&self) -> impl Iterator<Item = &ReceiveLogEntry> {
        self.logs.values()
    }

    pub fn open_frames(&self) -> usize {
        self.open.len()
    }

    fn open_frame(&mut self, frame_id: u32, now: u64) {
        if self.open.contains_key(&frame_id) {
            return;
        }
        if let Some(h) = self.highest_seen {
            if frame_id > h + 1 {
                let from = (h + 1).max(frame_id.saturating_sub(MAX_SKIPPED_FRAMES));
                for id in from..frame_id {
                    if !self.finished.contains_key(&id) {
                        self.open.entry(id).or_insert_with(|| PartialFrame::new(id, now, self.cfg.deadline));
                    }
                }
            }
        }
        self.open.insert(frame_id, PartialFrame::new(frame_id, now, self.cfg.deadline));
        self.highest_seen = Some(self.highest_seen.map_or(frame_id, |h| h.max(frame_id)));
    }

    pub fn on_packet(&mut self, packet: DataPacket, now: u64) -> Vec<RxEvent> {
        if self.cfg.stream_id.is_some_and(|s| s != packet.stream_id) {
            self.counters.rejected += 1;
            return vec![RxEvent::Rejected];
        }
        match self.finished.get(&packet.frame_id) {
            Some(Finished::Completed) => {
                self.counters.duplicates += 1;
                return vec![RxEvent::Duplicate];
            }
            Some(Finished::Abandoned) => {
                self.counters.expired_packets += 1;
                return vec![RxEvent::Expired];
            }
            None => {}
        }
        self.open_frame(packet.frame_id, now);
        let frame = self.open.get_mut(&packet.frame_id).unwrap();

        let s = packet.segment_index;
        let idx = s as usize - 1;
        if frame.segments.len() <= idx {
            frame.segments.resize_with(idx + 1, || None);
        }
        let is_last = packet.flags.last_segment();
        let inconsistent = match frame.last_segment {
            Some(last) => (is_last && last != s) || (!is_last && s >= last),
            None => is_last && (frame.segments.len() > s as usize),
        };
        let seg = frame.segments[idx].get_or_insert_with(|| PartialSegment {
            packets_in_segment: packet.packets_in_segment,
            parts: vec![None; packet.packets_in_segment as usize],
            received: 0,
        });
        if inconsistent || seg.packets_in_segment != packet.packets_in_segment {
            self.counters.rejected += 1;
            return vec![RxEvent::Rejected];
        }
        let slot = &mut seg.parts[packet.packet_seq as usize - 1];
        if slot.is_some() {
            self.counters.duplicates += 1;
            return vec![RxEvent::Duplicate];
        }
        let pos = packet.pos();
        *slot = Some(packet.payload);
        seg.received += 1;
        let seg_done = seg.complete();
        if is_last {
            frame.last_segment = Some(s);
        }
        if seg_done {
            frame.complete_segments += 1;
        }

        self.counters.packets_received += 1;
        let log = &mut frame.log;
        if log.first_recv_ts.is_none() {
            log.first_recv_ts = Some(now);
            log.embedded_first_ts = Some(packet.send_timestamp);
            frame.deadline_at = self.cfg.deadline.map(|d| now + d);
        }
        log.last_recv_ts = Some(now);
        log.packets += 1;
        frame.last_activity = now;

        let jumped = match frame.frontier {
            None => pos != PacketPos::FIRST,
            Some(f) if pos > f => pos != frame.successor(f),
            Some(_) => false,
        };
        if frame.frontier.is_none_or(|f| pos > f) {
            frame.frontier = Some(pos);
        }
        if jumped && frame.gap_since.is_none() {
            frame.gap_since = Some(now);
        }

        let mut events = vec![RxEvent::Stored];
        if self.cfg.emit_segments && seg_done {
            while let Some(payload) = frame.segment(frame.forwarded + 1).filter(|x| x.complete()).map(|x| x.assemble())
            {
                frame.forwarded += 1;
                events.push(RxEvent::SegmentComplete(ReceivedSegment {
                    frame_id: frame.log.frame_id,
                    segment_index: frame.forwarded,
                    is_last: frame.last_segment == Some(frame.forwarded),
                    payload,
                }));
            }
        }
        if frame.is_complete() {
            let frame_id = frame.log.frame_id;
            let frame = self.open.remove(&frame_id).unwrap();
            let mut buf = BytesMut::new();
            for seg in frame.segments.iter().flatten() {
                for p in seg.parts.iter().flatten() {
                    buf.extend_from_slice(p);
                }
            }
            let mut log = frame.log;
            log.completed = true;
            self.finished.insert(frame_id, Finished::Completed);
            self.logs.insert(frame_id, log.clone());
            self.counters.frames_completed += 1;
            events.push(RxEvent::FrameComplete(CompletedFrame { frame_id, payload: buf.freeze(), log }));
        }
        events
    }

    /// Missing ranges of an open frame that are due for a NACK at `now`:
    /// holes below the highest received position, or, once the frame has
    /// been idle for the tail timeout, everything still missing.
    pub fn detect_gaps(&self, frame_id: u32, now: u64) -> Vec<NackRange> {
        let Some(frame) = self.open.get(&frame_id) else {
            return Vec::new();
        };
        if now >= frame.last_activity + self.cfg.tail_timeout {
            frame.missing(None, None)
        } else {
            match frame.frontier {
                Some(f) => frame.missing(frame.nacked_to, Some(f)),
                None => Vec::new(),
            }
        }
    }

    /// Earliest local time at which [`on_timer`](Self::on_timer) has work.
    pub fn next_timer_at(&self) -> Option<u64> {
        self.open
            .values()
            .flat_map(|f| {
                [
                    f.deadline_at,
                    Some(f.last_activity + self.cfg.tail_timeout),
                    f.gap_since.map(|g| g + self.cfg.nack_delay),
                ]
            })
            .flatten()
            .min()
    }

    fn abandon(&mut self, frame_id: u32, reason: AbandonReason) -> RxEvent {
        let frame = self.open.remove(&frame_id).expect("abandoning an open frame");
        self.finished.insert(frame_id, Finished::Abandoned);
        self.logs.insert(frame_id, frame.log);
        self.counters.frames_abandoned += 1;
        RxEvent::FrameAbandoned { frame_id, reason }
    }

    fn nack_packets(&mut self, frame_id: u32, ranges: Vec<NackRange>, now: u64) -> Vec<RxEvent> {
        ranges
            .chunks(MAX_NACK_RANGES)
            .map(|chunk| {
                self.counters.nacks_sent += 1;
                RxEvent::NackEmitted(ControlPacket {
                    stream_id: self.cfg.stream_id.unwrap_or(0),
                    frame_id,
                    send_timestamp: now,
                    body: ControlBody::Nack(chunk.to_vec()),
                })
            })
            .collect()
    }

    /// Fires due deadlines, tail timeouts and gap NACKs.
    pub fn on_timer(&mut self, now: u64) -> Vec<RxEvent> {
        let mut events = Vec::new();
        let ids: Vec<u32> = self.open.keys().copied().collect();
        let rounds_limited = self.cfg.deadline.is_some();
        for id in ids {
            let frame = &self.open[&id];
            if frame.deadline_at.is_some_and(|d| now >= d) {
                events.push(self.abandon(id, AbandonReason::Deadline));
                continue;
            }
            let tail_due = now >= frame.last_activity + self.cfg.tail_timeout;
            let gap_due = frame.gap_since.is_some_and(|g| now >= g + self.cfg.nack_delay);
            if !tail_due && !gap_due {
                continue;
            }
            let ranges = self.detect_gaps(id, now);
            let frame = self.open.get_mut(&id).unwrap();
            if ranges.is_empty() {
                frame.gap_since = None;
                if tail_due {
                    frame.last_activity = now;
                }
                continue;
            }
            if tail_due {
                if rounds_limited && frame.repair_rounds >= self.cfg.max_nack_rounds {
                    events.push(self.abandon(id, AbandonReason::NackRounds));
                    continue;
                }
                frame.repair_rounds += 1;
                frame.last_activity = now;
            }
            frame.log.nack_count += 1;
            frame.gap_since = None;
            frame.nacked_to = frame.frontier;
            events.extend(self.nack_packets(id, ranges, now));
        }
        events
    }

    /// FRAME_ACK for a completed frame.
    pub fn frame_ack(&self, frame_id: u32, now: u64) -> ControlPacket {
        ControlPacket {
            stream_id: self.cfg.stream_id.unwrap_or(0),
            frame_id,
            send_timestamp: now,
            body: ControlBody::FrameAck,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{make_synthetic_frame, packetize_frame, ranges_well_formed};

    fn packets(frame_id: u32, len: usize, pkt: usize) -> Vec<DataPacket> {
        let f = make_synthetic_frame(frame_id, len, 0, 0, 3).unwrap();
        packetize_frame(&f, 65_000, pkt, 0).unwrap()
    }

    fn complete_of(events: &[RxEvent]) -> Option<&CompletedFrame> {
        events.iter().find_map(|e| match e {
            RxEvent::FrameComplete(c) => Some(c),
            _ => None,
        })
    }

    #[test]
    fn in_order_delivery_completes_once() {
        let mut rx = ReceiverEndpoint::new(ReceiverConfig::default());
        let pkts = packets(1, 100_000, 1_400);
        let n = pkts.len();
        let mut done = None;
        for (i, p) in pkts.into_iter().enumerate() {
            let ev = rx.on_packet(p, 1_000 + i as u64 * 10);
            assert_eq!(ev[0], RxEvent::Stored);
            if let Some(c) = complete_of(&ev) {
                assert!(done.is_none());
                done = Some(c.clone());
            }
        }
        let done = done.expect("frame completes");
        let expected = make_synthetic_frame(1, 100_000, 0, 0, 3).unwrap();
        assert_eq!(&done.payload, expected.payload());
        assert_eq!(done.log.receive_span(), Some((n as u64 - 1) * 10));
        assert_eq!(rx.counters().frames_completed, 1);
    }

    #[test]
    fn duplicates_are_idempotent() {
        let mut rx = ReceiverEndpoint::new(ReceiverConfig::default());
        let pkts = packets(1, 10_000, 1_400);
        assert_eq!(rx.on_packet(pkts[0].clone(), 0), vec![RxEvent::Stored]);
        assert_eq!(rx.on_packet(pkts[0].clone(), 5), vec![RxEvent::Duplicate]);
        for p in &pkts[1..] {
            rx.on_packet(p.clone(), 10);
        }
        assert_eq!(rx.on_packet(pkts[3].clone(), 20), vec![RxEvent::Duplicate]);
        assert_eq!(rx.log(1).unwrap().last_recv_ts, Some(10));
    }

    #[test]
    fn detect_gaps_tail_of_known_segment() {
        // segments 1-2 complete, segment 3 (the last) has 20 packets of which 1..=10 arrived
        let mut rx = ReceiverEndpoint::new(ReceiverConfig::default());
        let pkts = packets(1, 130_000 + 20 * 100, 100);
        let seg3: Vec<_> = pkts.iter().filter(|p| p.segment_index == 3).cloned().collect();
        assert_eq!(seg3.len(), 20);
        for p in pkts.iter().filter(|p| p.segment_index < 3).chain(seg3[..10].iter()) {
            rx.on_packet(p.clone(), 0);
        }
        assert_eq!(rx.detect_gaps(1, 0), vec![]);
        assert_eq!(rx.detect_gaps(1, 5 * MS), vec![NackRange::within(3, 11, 20)]);
    }

    #[test]
    fn detect_gaps_two_holes() {
        let mut rx = ReceiverEndpoint::new(ReceiverConfig::default());
        let pkts = packets(1, 1_000, 100);
        for p in &pkts {
            if ![5, 9, 10].contains(&p.packet_seq) {
                rx.on_packet(p.clone(), 0);
            }
        }
        let gaps = rx.detect_gaps(1, 10 * MS);
        assert_eq!(gaps, vec![NackRange::within(1, 5, 5), NackRange::within(1, 9, 10)]);
        assert!(ranges_well_formed(&gaps));
        // before the tail timeout only the hole below the frontier is due
        assert_eq!(rx.detect_gaps(1, 0), vec![NackRange::within(1, 5, 5)]);
    }

    #[test]
    fn nothing_missing_means_no_nack() {
        let mut rx = ReceiverEndpoint::new(ReceiverConfig::default());
        let pkts = packets(1, 1_000, 100);
        for p in &pkts[..5] {
            rx.on_packet(p.clone(), 0);
        }
        assert!(rx.detect_gaps(1, 0).is_empty());
        assert!(rx.on_timer(MS).is_empty());
    }

    #[test]
    fn unknown_tail_is_requested_after_timeout() {
        let mut rx = ReceiverEndpoint::new(ReceiverConfig::default());
        let pkts = packets(1, 200_000, 1_400);
        for p in pkts.iter().filter(|p| p.segment_index <= 2) {
            rx.on_packet(p.clone(), 0);
        }
        assert_eq!(rx.next_timer_at(), Some(5 * MS));
        let ev = rx.on_timer(5 * MS);
        let nack = match &ev[..] {
            [RxEvent::NackEmitted(c)] => c.clone(),
            other => panic!("unexpected {other:?}"),
        };
        assert_eq!(nack.body, ControlBody::Nack(vec![NackRange::new(PacketPos::new(3, 1), PacketPos::END)]));
        assert_eq!(rx.counters().nacks_sent, 1);
    }

    #[test]
    fn gap_nack_after_delay() {
        let mut rx = ReceiverEndpoint::new(ReceiverConfig::default());
        let pkts = packets(1, 20_000, 1_000);
        for p in pkts.iter().filter(|p| p.packet_seq != 4) {
            rx.on_packet(p.clone(), 100);
        }
        assert_eq!(rx.next_timer_at(), Some(100 + 2 * MS));
        let ev = rx.on_timer(100 + 2 * MS);
        assert!(
            matches!(&ev[..], [RxEvent::NackEmitted(c)] if c.body == ControlBody::Nack(vec![NackRange::within(1, 4, 4)]))
        );
        let fix = pkts[3].clone();
        let ev = rx.on_packet(fix, 3 * MS);
        assert!(complete_of(&ev).is_some());
        assert_eq!(rx.log(1).unwrap().nack_count, 1);
    }

    #[test]
    fn deadline_abandons_and_late_packets_expire() {
        let mut rx = ReceiverEndpoint::new(ReceiverConfig { deadline: Some(10 * MS), ..Default::default() });
        let pkts = packets(1, 10_000, 1_000);
        rx.on_packet(pkts[0].clone(), 0);
        let ev = rx.on_timer(10 * MS);
        assert!(ev.contains(&RxEvent::FrameAbandoned { frame_id: 1, reason: AbandonReason::Deadline }));
        assert_eq!(rx.on_packet(pkts[1].clone(), 11 * MS), vec![RxEvent::Expired]);
        assert_eq!(rx.counters().expired_packets, 1);
        assert!(!rx.log(1).unwrap().completed);
    }

    #[test]
    fn nack_rounds_are_bounded_with_a_deadline() {
        let mut rx =
            ReceiverEndpoint::new(ReceiverConfig { deadline: Some(10 * crate::time::SEC), ..Default::default() });
        let pkts = packets(1, 10_000, 1_000);
        rx.on_packet(pkts[0].clone(), 0);
        let mut t = 0;
        let mut nacks = 0;
        loop {
            t = rx.next_timer_at().unwrap().max(t);
            let ev = rx.on_timer(t);
            nacks += ev.iter().filter(|e| matches!(e, RxEvent::NackEmitted(_))).count();
            if ev.iter().any(|e| matches!(e, RxEvent::FrameAbandoned { reason: AbandonReason::NackRounds, .. })) {
                break;
            }
        }
        assert_eq!(nacks, 3);

        let mut unbounded = ReceiverEndpoint::new(ReceiverConfig { deadline: None, ..Default::default() });
        unbounded.on_packet(pkts[0].clone(), 0);
        for i in 1..=10 {
            let ev = unbounded.on_timer(i * 5 * MS);
            assert_eq!(ev.len(), 1, "round {i}");
        }
    }

    #[test]
    fn skipped_frames_are_requested_whole() {
        let mut rx = ReceiverEndpoint::new(ReceiverConfig::default());
        for p in packets(1, 1_000, 500) {
            rx.on_packet(p, 0);
        }
        rx.on_packet(packets(3, 1_000, 500)[0].clone(), 0);
        assert_eq!(rx.open_frames(), 2);
        assert_eq!(rx.detect_gaps(2, 5 * MS), vec![NackRange::new(PacketPos::FIRST, PacketPos::END)]);
    }

    #[test]
    fn segments_emitted_in_order() {
        let mut rx = ReceiverEndpoint::new(ReceiverConfig { emit_segments: true, ..Default::default() });
        let pkts = packets(1, 140_000, 1_400);
        let (seg1, rest): (Vec<_>, Vec<_>) = pkts.into_iter().partition(|p| p.segment_index == 1);
        let mut segs = Vec::new();
        for p in rest.into_iter().chain(seg1) {
            for e in rx.on_packet(p, 0) {
                if let RxEvent::SegmentComplete(s) = e {
                    segs.push(s);
                }
            }
        }
        let idx: Vec<_> = segs.iter().map(|s| (s.segment_index, s.is_last)).collect();
        assert_eq!(idx, [(1, false), (2, false), (3, true)]);
        assert_eq!(segs[2].payload.len(), 10_000);
    }

    #[test]
    fn foreign_stream_rejected() {
        let mut rx = ReceiverEndpoint::new(ReceiverConfig { stream_id: Some(1), ..Default::default() });
        assert_eq!(rx.on_packet(packets(1, 100, 100)[0].clone(), 0), vec![RxEvent::Rejected]);
    }
}
