//! Bit-exact wire codec.
//!
//! Every datagram starts with the same 32-byte big-endian header:
//!
//! ```text
//!  0      2   3    4     5      6          10        12       14        16       18               26        32
//!  +------+---+----+-----+------+----------+---------+--------+---------+--------+----------------+---------+
//!  |magic |ver|type|flags|stream| frame_id |segment  |pkt seq |pkts/seg |pay len |send_timestamp  |reserved |
//!  |0x564C|01 |    |     |      |   u32    |  u16    |  u16   |  u16    |  u16   |   u64 (ns)     | 6 x 00  |
//!  +------+---+----+-----+------+----------+---------+--------+---------+--------+----------------+---------+
//! ```
//!
//! followed by exactly `payload_length` payload bytes. Control packets use the
//! same header with segment/sequence fields zero and a typed payload:
//!
//! * NACK: `u16` range count, then per range `start.segment, start.seq,
//!   end.segment, end.seq` as four `u16`s.
//! * FRAME_ACK: empty.
//! * SYNC_REQ: `t1` (`u64`).
//! * SYNC_RESP: `t1, t2, t3, t4` (`u64` each; `t4` is zero on the wire and is
//!   filled in by the requester on receipt).

use bytes::{Buf, BufMut, Bytes};
use thiserror::Error;

use super::{ranges_well_formed, DataPacket, NackRange, PacketFlags, PacketPos};

pub const HEADER_LEN: usize = 32;
pub const MAGIC: u16 = 0x564C;
pub const VERSION: u8 = 0x01;
/// Upper bound on ranges per NACK datagram.
pub const MAX_NACK_RANGES: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum PacketType {
    Data = 0x01,
    Nack = 0x02,
    FrameAck = 0x03,
    SyncReq = 0x04,
    SyncResp = 0x05,
}

impl PacketType {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0x01 => Self::Data,
            0x02 => Self::Nack,
            0x03 => Self::FrameAck,
            0x04 => Self::SyncReq,
            0x05 => Self::SyncResp,
            _ => return None,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("short buffer: {len} bytes, header needs {HEADER_LEN}")]
    ShortBuffer { len: usize },
    #[error("bad magic: 0x{0:04X}")]
    BadMagic(u16),
    #[error("unsupported version: {0}")]
    UnsupportedVersion(u8),
    #[error("unknown packet_type: 0x{0:02X}")]
    UnknownType(u8),
    #[error("expected a data packet, found {0:?}")]
    NotData(PacketType),
    #[error("invalid field {field}: {value}")]
    InvalidField { field: &'static str, value: u64 },
    #[error("reserved header bytes are not zero")]
    ReservedNonZero,
    #[error("payload_length {declared} does not match {actual} trailing bytes")]
    LengthMismatch { declared: usize, actual: usize },
}

fn invalid(field: &'static str, value: impl Into<u64>) -> DecodeError {
    DecodeError::InvalidField { field, value: value.into() }
}

/// Control-plane message body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControlBody {
    Nack(Vec<NackRange>),
    FrameAck,
    SyncReq { t1: u64 },
    SyncResp { t1: u64, t2: u64, t3: u64, t4: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlPacket {
    pub stream_id: u8,
    /// Frame the message refers to; the exchange sequence number for sync.
    pub frame_id: u32,
    pub send_timestamp: u64,
    pub body: ControlBody,
}

impl ControlPacket {
    pub fn packet_type(&self) -> PacketType {
        match self.body {
            ControlBody::Nack(_) => PacketType::Nack,
            ControlBody::FrameAck => PacketType::FrameAck,
            ControlBody::SyncReq { .. } => PacketType::SyncReq,
            ControlBody::SyncResp { .. } => PacketType::SyncResp,
        }
    }

    fn payload_len(&self) -> usize {
        match &self.body {
            ControlBody::Nack(r) => 2 + 8 * r.len(),
            ControlBody::FrameAck => 0,
            ControlBody::SyncReq { .. } => 8,
            ControlBody::SyncResp { .. } => 32,
        }
    }

    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.payload_len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.wire_len());
        put_header(
            &mut buf,
            self.packet_type(),
            0,
            self.stream_id,
            self.frame_id,
            [0, 0, 0],
            self.payload_len() as u16,
            self.send_timestamp,
        );
        match &self.body {
            ControlBody::Nack(ranges) => {
                buf.put_u16(ranges.len() as u16);
                for r in ranges {
                    buf.put_u16(r.start.segment);
                    buf.put_u16(r.start.seq);
                    buf.put_u16(r.end.segment);
                    buf.put_u16(r.end.seq);
                }
            }
            ControlBody::FrameAck => {}
            ControlBody::SyncReq { t1 } => buf.put_u64(*t1),
            ControlBody::SyncResp { t1, t2, t3, t4 } => {
                for t in [t1, t2, t3, t4] {
                    buf.put_u64(*t);
                }
            }
        }
        buf
    }
}

/// Any decoded datagram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Packet {
    Data(DataPacket),
    Control(ControlPacket),
}

impl Packet {
    pub fn encode(&self) -> Vec<u8> {
        match self {
            Packet::Data(p) => encode_packet(p),
            Packet::Control(c) => c.encode(),
        }
    }

    pub fn decode(buf: &[u8]) -> Result<Packet, DecodeError> {
        let h = Header::parse(buf)?;
        let mut body = &buf[HEADER_LEN..];
        if h.packet_type == PacketType::Data {
            if h.segment_index == 0 {
                return Err(invalid("segment_index", h.segment_index));
            }
            if h.packets_in_segment == 0 {
                return Err(invalid("packets_in_segment", h.packets_in_segment));
            }
            if h.packet_seq == 0 || h.packet_seq > h.packets_in_segment {
                return Err(invalid("packet_seq", h.packet_seq));
            }
            if h.payload_length == 0 {
                return Err(invalid("payload_length", 0u16));
            }
            return Ok(Packet::Data(DataPacket {
                stream_id: h.stream_id,
                flags: h.flags,
                frame_id: h.frame_id,
                segment_index: h.segment_index,
                packet_seq: h.packet_seq,
                packets_in_segment: h.packets_in_segment,
                send_timestamp: h.send_timestamp,
                payload: Bytes::copy_from_slice(body),
            }));
        }

        if h.flags.bits() != 0 {
            return Err(invalid("flags", h.flags.bits()));
        }
        for (field, v) in [
            ("segment_index", h.segment_index),
            ("packet_seq", h.packet_seq),
            ("packets_in_segment", h.packets_in_segment),
        ] {
            if v != 0 {
                return Err(invalid(field, v));
            }
        }
        let expect = |body: &[u8], n: usize| {
            if body.len() == n {
                Ok(())
            } else {
                Err(invalid("payload_length", body.len() as u64))
            }
        };
        let control = match h.packet_type {
            PacketType::Nack => {
                if body.len() < 2 {
                    return Err(invalid("payload_length", body.len() as u64));
                }
                let count = body.get_u16() as usize;
                if count == 0 || count > MAX_NACK_RANGES {
                    return Err(invalid("nack_range_count", count as u64));
                }
                expect(body, count * 8)?;
                let ranges: Vec<NackRange> = (0..count)
                    .map(|_| {
                        let start = PacketPos::new(body.get_u16(), body.get_u16());
                        let end = PacketPos::new(body.get_u16(), body.get_u16());
                        NackRange::new(start, end)
                    })
                    .collect();
                if ranges.iter().any(|r| r.start.segment == 0 || r.start.seq == 0) || !ranges_well_formed(&ranges) {
                    return Err(invalid("nack_ranges", count as u64));
                }
                ControlBody::Nack(ranges)
            }
            PacketType::FrameAck => {
                expect(body, 0)?;
                ControlBody::FrameAck
            }
            PacketType::SyncReq => {
                expect(body, 8)?;
                ControlBody::SyncReq { t1: body.get_u64() }
            }
            PacketType::SyncResp => {
                expect(body, 32)?;
                ControlBody::SyncResp { t1: body.get_u64(), t2: body.get_u64(), t3: body.get_u64(), t4: body.get_u64() }
            }
            PacketType::Data => unreachable!(),
        };
        Ok(Packet::Control(ControlPacket {
            stream_id: h.stream_id,
            frame_id: h.frame_id,
            send_timestamp: h.send_timestamp,
            body: control,
        }))
    }
}

struct Header {
    packet_type: PacketType,
    flags: PacketFlags,
    stream_id: u8,
    frame_id: u32,
    segment_index: u16,
    packet_seq: u16,
    packets_in_segment: u16,
    payload_length: u16,
    send_timestamp: u64,
}

impl Header {
    fn parse(buf: &[u8]) -> Result<Header, DecodeError> {
        if buf.len() < HEADER_LEN {
            return Err(DecodeError::ShortBuffer { len: buf.len() });
        }
        let mut b = &buf[..HEADER_LEN];
        let magic = b.get_u16();
        if magic != MAGIC {
            return Err(DecodeError::BadMagic(magic));
        }
        let version = b.get_u8();
        if version != VERSION {
            return Err(DecodeError::UnsupportedVersion(version));
        }
        let raw_type = b.get_u8();
        let packet_type = PacketType::from_u8(raw_type).ok_or(DecodeError::UnknownType(raw_type))?;
        let raw_flags = b.get_u8();
        let flags = PacketFlags::from_bits(raw_flags).ok_or_else(|| invalid("flags", raw_flags))?;
        let h = Header {
            packet_type,
            flags,
            stream_id: b.get_u8(),
            frame_id: b.get_u32(),
            segment_index: b.get_u16(),
            packet_seq: b.get_u16(),
            packets_in_segment: b.get_u16(),
            payload_length: b.get_u16(),
            send_timestamp: b.get_u64(),
        };
        if b.iter().any(|&x| x != 0) {
            return Err(DecodeError::ReservedNonZero);
        }
        let actual = buf.len() - HEADER_LEN;
        if h.payload_length as usize != actual {
            return Err(DecodeError::LengthMismatch { declared: h.payload_length as usize, actual });
        }
        Ok(h)
    }
}

#[allow(clippy::too_many_arguments)]
fn put_header(
    buf: &mut Vec<u8>,
    packet_type: PacketType,
    flags: u8,
    stream_id: u8,
    frame_id: u32,
    [segment_index, packet_seq, packets_in_segment]: [u16; 3],
    payload_length: u16,
    send_timestamp: u64,
) {
    buf.put_u16(MAGIC);
    buf.put_u8(VERSION);
    buf.put_u8(packet_type as u8);
    buf.put_u8(flags);
    buf.put_u8(stream_id);
    buf.put_u32(frame_id);
    buf.put_u16(segment_index);
    buf.put_u16(packet_seq);
    buf.put_u16(packets_in_segment);
    buf.put_u16(payload_length);
    buf.put_u64(send_timestamp);
    buf.put_bytes(0, 6);
}

pub fn encode_packet(p: &DataPacket) -> Vec<u8> {
    let mut buf = Vec::with_capacity(p.wire_len());
    put_header(
        &mut buf,
        PacketType::Data,
        p.flags.bits(),
        p.stream_id,
        p.frame_id,
        [p.segment_index, p.packet_seq, p.packets_in_segment],
        p.payload_length(),
        p.send_timestamp,
    );
    buf.extend_from_slice(&p.payload);
    buf
}

pub fn decode_packet(buf: &[u8]) -> Result<DataPacket, DecodeError> {
    match Packet::decode(buf)? {
        Packet::Data(p) => Ok(p),
        Packet::Control(c) => Err(DecodeError::NotData(c.packet_type())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> DataPacket {
        DataPacket {
            stream_id: 2,
            flags: PacketFlags::from_bits(PacketFlags::LAST_SEGMENT).unwrap(),
            frame_id: 0xDEAD_BEEF,
            segment_index: 55,
            packet_seq: 8,
            packets_in_segment: 8,
            send_timestamp: 1_234_567_890_123,
            payload: Bytes::from_static(b"volumetric"),
        }
    }

    #[test]
    fn header_layout_is_bit_exact() {
        let wire = encode_packet(&sample());
        assert_eq!(wire.len(), 42);
        assert_eq!(
            &wire[..HEADER_LEN],
            &[
                0x56, 0x4C, 0x01, 0x01, 0x01, 0x02, 0xDE, 0xAD, 0xBE, 0xEF, 0x00, 0x37, 0x00, 0x08, 0x00, 0x08, 0x00,
                0x0A, 0x00, 0x00, 0x01, 0x1F, 0x71, 0xFB, 0x04, 0xCB, 0, 0, 0, 0, 0, 0
            ]
        );
        assert_eq!(&wire[HEADER_LEN..], b"volumetric");
        assert_eq!(decode_packet(&wire).unwrap(), sample());
    }

    #[test]
    fn short_buffer() {
        assert_eq!(decode_packet(&[0u8; 31]), Err(DecodeError::ShortBuffer { len: 31 }));
    }

    #[test]
    fn version_and_magic() {
        let mut wire = encode_packet(&sample());
        wire[2] = 255;
        assert_eq!(decode_packet(&wire), Err(DecodeError::UnsupportedVersion(255)));
        let mut wire = encode_packet(&sample());
        wire[0] = 0;
        assert_eq!(decode_packet(&wire), Err(DecodeError::BadMagic(0x004C)));
        let mut wire = encode_packet(&sample());
        wire[3] = 9;
        assert_eq!(decode_packet(&wire), Err(DecodeError::UnknownType(9)));
    }

    #[test]
    fn field_errors_name_the_field() {
        let mut wire = encode_packet(&sample());
        wire[13] = 9; // packet_seq 9 > packets_in_segment 8
        let err = decode_packet(&wire).unwrap_err();
        assert_eq!(err, DecodeError::InvalidField { field: "packet_seq", value: 9 });
        assert!(err.to_string().contains("packet_seq"));

        let mut wire = encode_packet(&sample());
        wire.push(0);
        assert_eq!(decode_packet(&wire), Err(DecodeError::LengthMismatch { declared: 10, actual: 11 }));

        let mut wire = encode_packet(&sample());
        wire[31] = 1;
        assert_eq!(decode_packet(&wire), Err(DecodeError::ReservedNonZero));
    }

    #[test]
    fn control_round_trips() {
        let msgs = [
            ControlBody::Nack(vec![NackRange::within(3, 11, 20), NackRange::new(PacketPos::new(4, 1), PacketPos::END)]),
            ControlBody::FrameAck,
            ControlBody::SyncReq { t1: 17 },
            ControlBody::SyncResp { t1: 1, t2: 2, t3: 3, t4: 0 },
        ];
        for body in msgs {
            let c = ControlPacket { stream_id: 1, frame_id: 77, send_timestamp: 99, body };
            let wire = c.encode();
            assert_eq!(wire.len(), c.wire_len());
            assert_eq!(Packet::decode(&wire).unwrap(), Packet::Control(c.clone()));
            assert_eq!(decode_packet(&wire), Err(DecodeError::NotData(c.packet_type())));
        }
    }

    #[test]
    fn malformed_nack_rejected() {
        let c = ControlPacket {
            stream_id: 0,
            frame_id: 1,
            send_timestamp: 0,
            body: ControlBody::Nack(vec![NackRange::within(2, 5, 9), NackRange::within(2, 7, 12)]),
        };
        assert!(matches!(Packet::decode(&c.encode()), Err(DecodeError::InvalidField { field: "nack_ranges", .. })));
        let empty = ControlPacket { body: ControlBody::Nack(vec![]), ..c };
        assert!(Packet::decode(&empty.encode()).is_err());
    }

    fn arb_packet() -> impl Strategy<Value = DataPacket> {
        (
            any::<u8>(),
            0u8..4,
            any::<u32>(),
            1u16..,
            1u16..,
            any::<u64>(),
            proptest::collection::vec(any::<u8>(), 1..1_500),
        )
            .prop_flat_map(|(stream_id, flags, frame_id, segment_index, pis, ts, payload)| {
                (1..=pis).prop_map(move |seq| DataPacket {
                    stream_id,
                    flags: PacketFlags::from_bits(flags).unwrap(),
                    frame_id,
                    segment_index,
                    packet_seq: seq,
                    packets_in_segment: pis,
                    send_timestamp: ts,
                    payload: Bytes::from(payload.clone()),
                })
            })
    }

    proptest! {
        #[test]
        fn codec_round_trip(p in arb_packet()) {
            prop_assert_eq!(decode_packet(&encode_packet(&p)).unwrap(), p);
        }

        #[test]
        fn header_mutation_never_goes_unnoticed(p in arb_packet(), idx in 0usize..HEADER_LEN, x in 1u8..) {
            let mut wire = encode_packet(&p);
            wire[idx] ^= x;
            match decode_packet(&wire) {
                Err(_) => {}
                Ok(q) => {
                    prop_assert_ne!(&q, &p);
                    // the payload is never reinterpreted as header or vice versa
                    prop_assert_eq!(q.payload, p.payload);
                }
            }
        }
    }
}
