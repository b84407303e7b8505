//! Volumetric frames and their decomposition into application segments and
//! transport packets.
//!
//! A frame is split into fixed-size segments (65,000 bytes by default), and
//! each segment is split into packets no larger than the transport payload
//! size. Concatenating packet payloads in `(segment_index, packet_seq)` order
//! restores the frame byte-for-byte.

mod wire;

pub use wire::{
    decode_packet, encode_packet, ControlBody, ControlPacket, DecodeError, Packet, PacketType, HEADER_LEN, MAGIC,
    MAX_NACK_RANGES, VERSION,
};

use bytes::Bytes;
use rand::RngCore;
use thiserror::Error;

/// 1 Mbyte, decimal.
pub const MBYTE: usize = 1_000_000;
/// 1 Kbyte, decimal.
pub const KBYTE: usize = 1_000;

pub const DEFAULT_SEGMENT_PAYLOAD: usize = 65_000;
/// MTU-safe default transport payload.
pub const DEFAULT_PACKET_PAYLOAD: usize = 1_400;
/// Payload size at which one 65,000-byte segment becomes 144 packets.
pub const PACKET_PAYLOAD_144: usize = 452;
/// Largest payload that fits a UDP datagram together with the header.
pub const MAX_PACKET_PAYLOAD: usize = 65_507 - HEADER_LEN;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("invalid frame: all section sizes are zero")]
    EmptyFrame,
    #[error("invalid frame: payload length {payload} does not match section total {sections}")]
    SectionMismatch { payload: usize, sections: usize },
    #[error("invalid frame: capture_end {end} precedes capture_start {start}")]
    CaptureOrder { start: u64, end: u64 },
    #[error("config error: {0} must be at least 1")]
    ZeroSize(&'static str),
    #[error("config error: packet payload size {0} exceeds {MAX_PACKET_PAYLOAD}")]
    PacketTooLarge(usize),
    #[error("frame of {bytes} bytes needs {segments} segments, more than the 16-bit index allows")]
    TooManySegments { bytes: usize, segments: usize },
    #[error("segment of {bytes} bytes needs {packets} packets, more than the 16-bit sequence allows")]
    TooManyPackets { bytes: usize, packets: usize },
}

/// One capture interval's color, depth and audio bytes, transmitted as a unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VolumetricFrame {
    frame_id: u32,
    color_bytes: usize,
    depth_bytes: usize,
    audio_bytes: usize,
    payload: Bytes,
    capture_start: u64,
    capture_end: u64,
}

impl VolumetricFrame {
    pub fn new(
        frame_id: u32,
        color_bytes: usize,
        depth_bytes: usize,
        audio_bytes: usize,
        payload: Bytes,
    ) -> Result<Self, FrameError> {
        let sections = color_bytes + depth_bytes + audio_bytes;
        if sections == 0 {
            return Err(FrameError::EmptyFrame);
        }
        if payload.len() != sections {
            return Err(FrameError::SectionMismatch { payload: payload.len(), sections });
        }
        Ok(Self { frame_id, color_bytes, depth_bytes, audio_bytes, payload, capture_start: 0, capture_end: 0 })
    }

    pub fn with_capture(mut self, start: u64, end: u64) -> Result<Self, FrameError> {
        if end < start {
            return Err(FrameError::CaptureOrder { start, end });
        }
        self.capture_start = start;
        self.capture_end = end;
        Ok(self)
    }

    pub fn frame_id(&self) -> u32 {
        self.frame_id
    }

    pub fn color_bytes(&self) -> usize {
        self.color_bytes
    }

    pub fn depth_bytes(&self) -> usize {
        self.depth_bytes
    }

    pub fn audio_bytes(&self) -> usize {
        self.audio_bytes
    }

    pub fn payload(&self) -> &Bytes {
        &self.payload
    }

    pub fn len(&self) -> usize {
        self.payload.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payload.is_empty()
    }

    pub fn capture_start(&self) -> u64 {
        self.capture_start
    }

    pub fn capture_end(&self) -> u64 {
        self.capture_end
    }

    pub fn color(&self) -> &[u8] {
        &self.payload[..self.color_bytes]
    }

    pub fn depth(&self) -> &[u8] {
        &self.payload[self.color_bytes..self.color_bytes + self.depth_bytes]
    }

    pub fn audio(&self) -> &[u8] {
        &self.payload[self.color_bytes + self.depth_bytes..]
    }
}

/// Builds a frame whose payload is seeded pseudo-random bytes. The content is
/// a pure function of `(frame_id, section sizes, seed)`.
pub fn make_synthetic_frame(
    frame_id: u32,
    color_bytes: usize,
    depth_bytes: usize,
    audio_bytes: usize,
    seed: u64,
) -> Result<VolumetricFrame, FrameError> {
    let total = color_bytes + depth_bytes + audio_bytes;
    if total == 0 {
        return Err(FrameError::EmptyFrame);
    }
    let mut payload = vec![0u8; total];
    crate::rng::stream(seed, "frame-payload", frame_id as u64).fill_bytes(&mut payload);
    VolumetricFrame::new(frame_id, color_bytes, depth_bytes, audio_bytes, payload.into())
}

/// Application-layer slice of a frame handed to the transport.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub frame_id: u32,
    /// 1-based.
    pub segment_index: u16,
    pub segment_count: u16,
    pub payload: Bytes,
}

impl Segment {
    pub fn is_last(&self) -> bool {
        self.segment_index == self.segment_count
    }
}

pub fn segment_frame(frame: &VolumetricFrame, segment_payload_size: usize) -> Result<Vec<Segment>, FrameError> {
    if segment_payload_size == 0 {
        return Err(FrameError::ZeroSize("segment_payload_size"));
    }
    let len = frame.len();
    let count = len.div_ceil(segment_payload_size);
    if count > u16::MAX as usize {
        return Err(FrameError::TooManySegments { bytes: len, segments: count });
    }
    Ok((0..count)
        .map(|i| {
            let start = i * segment_payload_size;
            let end = (start + segment_payload_size).min(len);
            Segment {
                frame_id: frame.frame_id,
                segment_index: (i + 1) as u16,
                segment_count: count as u16,
                payload: frame.payload.slice(start..end),
            }
        })
        .collect())
}

/// Per-packet header flags.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct PacketFlags(u8);

impl PacketFlags {
    /// The packet belongs to the final segment of its frame.
    pub const LAST_SEGMENT: u8 = 0x01;
    /// The packet is a retransmission.
    pub const RETRANSMIT: u8 = 0x02;
    pub const KNOWN: u8 = Self::LAST_SEGMENT | Self::RETRANSMIT;

    pub fn from_bits(bits: u8) -> Option<Self> {
        (bits & !Self::KNOWN == 0).then_some(Self(bits))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn last_segment(self) -> bool {
        self.0 & Self::LAST_SEGMENT != 0
    }

    pub fn retransmit(self) -> bool {
        self.0 & Self::RETRANSMIT != 0
    }

    pub fn set_last_segment(&mut self, on: bool) {
        self.set(Self::LAST_SEGMENT, on);
    }

    pub fn set_retransmit(&mut self, on: bool) {
        self.set(Self::RETRANSMIT, on);
    }

    fn set(&mut self, bit: u8, on: bool) {
        if on {
            self.0 |= bit;
        } else {
            self.0 &= !bit;
        }
    }
}

/// Position of a packet within its frame. Orders lexicographically by
/// `(segment, seq)`, which is the first-transmission order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PacketPos {
    pub segment: u16,
    pub seq: u16,
}

impl PacketPos {
    pub const FIRST: PacketPos = PacketPos { segment: 1, seq: 1 };
    pub const END: PacketPos = PacketPos { segment: u16::MAX, seq: u16::MAX };

    pub fn new(segment: u16, seq: u16) -> Self {
        Self { segment, seq }
    }
}

/// Inclusive range of packet positions requested by a NACK.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NackRange {
    pub start: PacketPos,
    pub end: PacketPos,
}

impl NackRange {
    pub fn new(start: PacketPos, end: PacketPos) -> Self {
        Self { start, end }
    }

    /// Packets `first..=last` of one segment.
    pub fn within(segment: u16, first: u16, last: u16) -> Self {
        Self::new(PacketPos::new(segment, first), PacketPos::new(segment, last))
    }

    pub fn contains(&self, pos: PacketPos) -> bool {
        self.start <= pos && pos <= self.end
    }
}

/// True when every range is non-empty and the list is sorted without overlap.
pub fn ranges_well_formed(ranges: &[NackRange]) -> bool {
    ranges.iter().all(|r| r.start <= r.end) && ranges.windows(2).all(|w| w[0].end < w[1].start)
}

/// Transport-layer data packet. Version and packet type are implied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataPacket {
    pub stream_id: u8,
    pub flags: PacketFlags,
    pub frame_id: u32,
    pub segment_index: u16,
    /// 1-based within the segment.
    pub packet_seq: u16,
    pub packets_in_segment: u16,
    /// Emission instant in the sender's local clock.
    pub send_timestamp: u64,
    pub payload: Bytes,
}

impl DataPacket {
    pub fn pos(&self) -> PacketPos {
        PacketPos::new(self.segment_index, self.packet_seq)
    }

    pub fn payload_length(&self) -> u16 {
        self.payload.len() as u16
    }

    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }
}

/// Splits one segment into packets of at most `packet_payload_size` bytes.
/// Packets of the final segment carry the `LAST_SEGMENT` flag.
pub fn packetize_segment(
    segment: &Segment,
    packet_payload_size: usize,
    stream_id: u8,
) -> Result<Vec<DataPacket>, FrameError> {
    if packet_payload_size == 0 {
        return Err(FrameError::ZeroSize("packet_payload_size"));
    }
    if packet_payload_size > MAX_PACKET_PAYLOAD {
        return Err(FrameError::PacketTooLarge(packet_payload_size));
    }
    let len = segment.payload.len();
    let count = len.div_ceil(packet_payload_size).max(1);
    if count > u16::MAX as usize {
        return Err(FrameError::TooManyPackets { bytes: len, packets: count });
    }
    let mut flags = PacketFlags::default();
    flags.set_last_segment(segment.is_last());
    Ok((0..count)
        .map(|i| {
            let start = i * packet_payload_size;
            let end = (start + packet_payload_size).min(len);
            DataPacket {
                stream_id,
                flags,
                frame_id: segment.frame_id,
                segment_index: segment.segment_index,
                packet_seq: (i + 1) as u16,
                packets_in_segment: count as u16,
                send_timestamp: 0,
                payload: segment.payload.slice(start..end),
            }
        })
        .collect())
}

/// Segments and packetizes a whole frame in first-transmission order.
pub fn packetize_frame(
    frame: &VolumetricFrame,
    segment_payload_size: usize,
    packet_payload_size: usize,
    stream_id: u8,
) -> Result<Vec<DataPacket>, FrameError> {
    let mut out = Vec::new();
    for seg in segment_frame(frame, segment_payload_size)? {
        out.extend(packetize_segment(&seg, packet_payload_size, stream_id)?);
    }
    Ok(out)
}

/// Number of packets a frame of `frame_bytes` produces under the given sizes.
pub fn packets_per_frame(frame_bytes: usize, segment_payload_size: usize, packet_payload_size: usize) -> usize {
    let full = frame_bytes / segment_payload_size;
    let rest = frame_bytes % segment_payload_size;
    full * segment_payload_size.div_ceil(packet_payload_size) + rest.div_ceil(packet_payload_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame_of(len: usize) -> VolumetricFrame {
        make_synthetic_frame(1, len, 0, 0, 42).unwrap()
    }

    #[test]
    fn synthetic_frame_sizes() {
        let f = make_synthetic_frame(1, 1_400_000, 2_100_000, 200_000, 9).unwrap();
        assert_eq!(f.len(), 3_700_000);
        assert_eq!(f.depth().len(), 2_100_000);
        assert_eq!(f.audio().len(), 200_000);
        assert_eq!(make_synthetic_frame(2, 100, 200, 300, 9).unwrap().len(), 600);
        assert_eq!(make_synthetic_frame(7, 0, 0, 0, 9), Err(FrameError::EmptyFrame));
    }

    #[test]
    fn synthetic_frame_is_deterministic() {
        let a = make_synthetic_frame(3, 500, 500, 10, 77).unwrap();
        let b = make_synthetic_frame(3, 500, 500, 10, 77).unwrap();
        let c = make_synthetic_frame(4, 500, 500, 10, 77).unwrap();
        let d = make_synthetic_frame(3, 500, 500, 10, 78).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.payload(), c.payload());
        assert_ne!(a.payload(), d.payload());
    }

    #[test]
    fn capture_order_enforced() {
        let f = frame_of(10);
        assert!(f.clone().with_capture(5, 5).is_ok());
        assert_eq!(f.with_capture(6, 5), Err(FrameError::CaptureOrder { start: 6, end: 5 }));
    }

    #[test]
    fn segmentation_counts() {
        let segs = segment_frame(&frame_of(3_520_000), 65_000).unwrap();
        assert_eq!(segs.len(), 55);
        assert_eq!(segs.last().unwrap().payload.len(), 10_000);
        assert!(segs.iter().all(|s| s.segment_count == 55));

        assert_eq!(segment_frame(&frame_of(65_000), 65_000).unwrap().len(), 1);
        let two = segment_frame(&frame_of(65_001), 65_000).unwrap();
        assert_eq!(two.len(), 2);
        assert_eq!(two[1].payload.len(), 1);
        assert_eq!(segment_frame(&frame_of(10), 0), Err(FrameError::ZeroSize("segment_payload_size")));
    }

    #[test]
    fn packetization_counts() {
        let seg = &segment_frame(&frame_of(65_000), 65_000).unwrap()[0];
        assert_eq!(packetize_segment(seg, 1_400, 0).unwrap().len(), 47);
        let p144 = packetize_segment(seg, PACKET_PAYLOAD_144, 0).unwrap();
        assert_eq!(p144.len(), 144);
        assert!(p144.iter().all(|p| p.packets_in_segment == 144 && p.flags.last_segment()));

        let tiny = &segment_frame(&frame_of(1), 65_000).unwrap()[0];
        assert_eq!(packetize_segment(tiny, 1_400, 0).unwrap().len(), 1);
        assert_eq!(packetize_segment(tiny, 0, 0), Err(FrameError::ZeroSize("packet_payload_size")));
    }

    #[test]
    fn packets_per_frame_matches_packetizer() {
        let f = frame_of(3_520_000);
        assert_eq!(packetize_frame(&f, 65_000, 1_400, 0).unwrap().len(), packets_per_frame(3_520_000, 65_000, 1_400));
        assert_eq!(packets_per_frame(3_520_000, 65_000, 1_400), 54 * 47 + 8);
    }

    #[test]
    fn only_final_segment_is_flagged() {
        let pkts = packetize_frame(&frame_of(200_000), 65_000, 1_400, 3).unwrap();
        for p in &pkts {
            assert_eq!(p.flags.last_segment(), p.segment_index == 4);
            assert_eq!(p.stream_id, 3);
        }
    }

    #[test]
    fn nack_range_shape() {
        let good = [NackRange::within(1, 2, 3), NackRange::within(1, 5, 5), NackRange::within(2, 1, 9)];
        assert!(ranges_well_formed(&good));
        assert!(!ranges_well_formed(&[NackRange::within(1, 4, 3)]));
        assert!(!ranges_well_formed(&[NackRange::within(1, 2, 5), NackRange::within(1, 5, 6)]));
        assert!(!ranges_well_formed(&[NackRange::within(2, 1, 1), NackRange::within(1, 1, 1)]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn reassembly_identity(
            len in prop_oneof![1usize..5_000, 5_000usize..200_000, 1_000_000usize..10_000_000],
            seg_size in prop_oneof![1usize..300, 300usize..100_000],
            pkt_size in 1usize..9_000,
        ) {
            // keep the 16-bit counters in range
            let seg_size = seg_size.max(len.div_ceil(u16::MAX as usize));
            let pkt_size = pkt_size.max(seg_size.div_ceil(u16::MAX as usize));
            let frame = make_synthetic_frame(9, len, 0, 0, 1).unwrap();
            let segs = segment_frame(&frame, seg_size).unwrap();
            prop_assert_eq!(segs.len(), len.div_ceil(seg_size));
            let mut out = Vec::with_capacity(len);
            for (i, seg) in segs.iter().enumerate() {
                prop_assert_eq!(seg.segment_index as usize, i + 1);
                if i + 1 < segs.len() {
                    prop_assert_eq!(seg.payload.len(), seg_size);
                }
                let pkts = packetize_segment(seg, pkt_size, 0).unwrap();
                prop_assert_eq!(pkts.len(), seg.payload.len().div_ceil(pkt_size));
                for p in pkts {
                    prop_assert!(p.payload.len() <= pkt_size);
                    prop_assert!(1 <= p.packet_seq && p.packet_seq <= p.packets_in_segment);
                    out.extend_from_slice(&p.payload);
                }
            }
            prop_assert!(out[..] == frame.payload()[..]);
        }
    }
}
