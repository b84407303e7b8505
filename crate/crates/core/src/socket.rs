//! The pipeline over real UDP sockets, one role per process (or per thread in
//! loopback mode).
//!
//! Each role stamps packets with its own [`HostClock`] and estimates its
//! offset to receiver 0, the clock master, with SYNC_REQ/SYNC_RESP exchanges.
//! Roles write their logs into the output directory; [`assemble`] joins them
//! into the same per-frame records the simulator produces.

use std::collections::BTreeMap;
use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::app::{busy_work, Capture, Render};
use crate::clocksync::{estimate_offset, HostClock};
use crate::config::{Diagnostic, Mode, ScenarioConfig};
use crate::frame::{encode_packet, ControlBody, ControlPacket, FrameError, Packet, VolumetricFrame};
use crate::metrics::{
    self, assemble_record, partial_record, CaptureRecord, DistributionEntry, MetricsError, PathOffsets, RecordSources,
    RenderRecord,
};
use crate::relay::{RelayError, RelayEvent, RelayNode};
use crate::sim::{SimOutput, SimStats};
use crate::time::MS;
use crate::transport::{ReceiveLogEntry, ReceiverEndpoint, RxEvent, SendLogEntry, SenderEndpoint, TransportError};

const MAX_DATAGRAM: usize = 65_536;
/// Delay between the first successful sync and the first capture.
const START_DELAY: u64 = 100 * MS;
const SYNC_RESEND: u64 = 200 * MS;
/// How long a role waits for its first packet, in idle timeouts.
const STARTUP_GRACE: u64 = 10;

#[derive(Debug, Error)]
pub enum SocketError {
    #[error("invalid configuration: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Config(Vec<Diagnostic>),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
    #[error("clock master at {0} did not answer")]
    MasterUnreachable(SocketAddr),
    #[error("{path}: {source}")]
    Log { path: PathBuf, source: csv::Error },
    #[error("role thread panicked")]
    Panicked,
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Relay(#[from] RelayError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> SocketError {
    let context = context.into();
    move |source| SocketError::Io { context, source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Sender,
    Relay,
    Receiver(usize),
}

impl FromStr for Role {
    type Err = String;

    /// `sender`, `relay`, `receiver` (receiver 0) or `receiver:<index>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sender" => Ok(Role::Sender),
            "relay" => Ok(Role::Relay),
            "receiver" => Ok(Role::Receiver(0)),
            _ => s
                .strip_prefix("receiver:")
                .and_then(|i| i.parse().ok())
                .map(Role::Receiver)
                .ok_or_else(|| format!("unknown role {s:?}; expected sender, relay, receiver or receiver:<index>")),
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Role::Sender => f.write_str("sender"),
            Role::Relay => f.write_str("relay"),
            Role::Receiver(i) => write!(f, "receiver:{i}"),
        }
    }
}

/// Resolved addresses of every role.
#[derive(Debug, Clone)]
pub struct Peers {
    pub sender: SocketAddr,
    pub relay: SocketAddr,
    pub receivers: Vec<SocketAddr>,
}

impl Peers {
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self, SocketError> {
        let parse = |key: &str, v: &str| {
            v.parse::<SocketAddr>().map_err(|_| {
                SocketError::Config(vec![Diagnostic {
                    key: key.into(),
                    value: v.into(),
                    constraint: "expected host:port".into(),
                }])
            })
        };
        Ok(Self {
            sender: parse("socket.sender_addr", &cfg.socket.sender_addr)?,
            relay: parse("socket.relay_addr", &cfg.socket.relay_addr)?,
            receivers: cfg
                .socket
                .receiver_addrs
                .iter()
                .map(|a| parse("socket.receiver_addrs", a))
                .collect::<Result<_, _>>()?,
        })
    }

    fn master(&self) -> SocketAddr {
        self.receivers[0]
    }

    fn addr(&self, role: Role) -> SocketAddr {
        match role {
            Role::Sender => self.sender,
            Role::Relay => self.relay,
            Role::Receiver(i) => self.receivers[i],
        }
    }
}

/// The warning printed when a socket run is configured.
pub fn link_model_warning() -> &'static str {
    "warning: socket mode ignores link model keys (hop*.bandwidth_bps, distance, switching, loss, reorder) and node stage delays"
}

struct Net {
    sock: UdpSocket,
    buf: Vec<u8>,
    nonblocking: bool,
}

impl Net {
    fn new(sock: UdpSocket) -> Self {
        Self { sock, buf: vec![0; MAX_DATAGRAM], nonblocking: false }
    }

    fn send(&self, bytes: &[u8], to: SocketAddr) -> Result<(), SocketError> {
        match self.sock.send_to(bytes, to) {
            Ok(_) => Ok(()),
            // A peer that is not up yet; reliability recovers the loss.
            Err(e) if e.kind() == io::ErrorKind::ConnectionRefused => Ok(()),
            Err(e) => Err(io_err(format!("send to {to}"))(e)),
        }
    }

    fn send_control(&self, c: &ControlPacket, to: SocketAddr) -> Result<(), SocketError> {
        self.send(&c.encode(), to)
    }

    /// Waits until host time `until` for one datagram. Undecodable datagrams
    /// are dropped.
    fn recv(&mut self, clock: &HostClock, until: u64) -> Result<Option<(Packet, SocketAddr)>, SocketError> {
        let wait = until.saturating_sub(clock.now());
        let nonblocking = wait < 20_000;
        if nonblocking != self.nonblocking {
            self.sock.set_nonblocking(nonblocking).map_err(io_err("set_nonblocking"))?;
            self.nonblocking = nonblocking;
        }
        if !nonblocking {
            self.sock.set_read_timeout(Some(Duration::from_nanos(wait))).map_err(io_err("set_read_timeout"))?;
        }
        match self.sock.recv_from(&mut self.buf) {
            Ok((n, from)) => Ok(Packet::decode(&self.buf[..n]).ok().map(|p| (p, from))),
            Err(e)
                if matches!(
                    e.kind(),
                    io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut | io::ErrorKind::ConnectionRefused
                ) =>
            {
                Ok(None)
            }
            Err(e) => Err(io_err("recv")(e)),
        }
    }
}

/// Slave side of the offset handshake.
struct SyncClient {
    master: SocketAddr,
    interval: u64,
    next_at: u64,
    seq: u32,
    pending: Option<(u32, u64)>,
    offset: Option<i64>,
}

impl SyncClient {
    fn new(master: SocketAddr, interval: u64, now: u64) -> Self {
        Self { master, interval, next_at: now, seq: 0, pending: None, offset: None }
    }

    fn due_at(&self) -> u64 {
        match self.pending {
            Some((_, t1)) => t1 + SYNC_RESEND,
            None => self.next_at,
        }
    }

    fn poll(&mut self, net: &Net, now: u64) -> Result<(), SocketError> {
        if now < self.due_at() {
            return Ok(());
        }
        self.seq += 1;
        self.pending = Some((self.seq, now));
        let req = ControlPacket {
            stream_id: 0,
            frame_id: self.seq,
            send_timestamp: now,
            body: ControlBody::SyncReq { t1: now },
        };
        net.send_control(&req, self.master)
    }

    fn on_response(&mut self, p: &ControlPacket, now: u64) {
        if let (ControlBody::SyncResp { t1, t2, t3, .. }, Some((seq, _))) = (&p.body, self.pending) {
            if p.frame_id == seq {
                self.offset = Some(estimate_offset(*t1, *t2, *t3, now));
                self.pending = None;
                self.next_at = now + self.interval;
            }
        }
    }
}

fn sync_response(req: &ControlPacket, t2: u64, clock: &HostClock) -> Option<ControlPacket> {
    let ControlBody::SyncReq { t1 } = req.body else {
        return None;
    };
    let t3 = clock.now();
    Some(ControlPacket {
        stream_id: req.stream_id,
        frame_id: req.frame_id,
        send_timestamp: t3,
        body: ControlBody::SyncResp { t1, t2, t3, t4: 0 },
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClockRecord {
    pub offset_ns: i64,
}

#[derive(Debug, Clone, Default)]
pub struct SenderLogs {
    pub capture: Vec<CaptureRecord>,
    pub send: Vec<SendLogEntry>,
    pub offset: i64,
}

#[derive(Debug, Clone, Default)]
pub struct RelayLogs {
    pub upstream: Vec<ReceiveLogEntry>,
    pub downstream: Vec<Vec<SendLogEntry>>,
    pub distribution: Vec<Vec<DistributionEntry>>,
    pub offset: i64,
}

#[derive(Debug, Clone, Default)]
pub struct ReceiverLogs {
    pub receive: Vec<ReceiveLogEntry>,
    pub render: Vec<RenderRecord>,
    pub offset: i64,
}

#[derive(Debug, Clone)]
pub enum RoleLogs {
    Sender(SenderLogs),
    Relay(RelayLogs),
    Receiver(usize, ReceiverLogs),
}

fn idle_exceeded(cfg: &ScenarioConfig, started: u64, last_rx: Option<u64>, now: u64) -> bool {
    match last_rx {
        Some(t) => now >= t + cfg.socket.idle_timeout,
        None => now >= started + STARTUP_GRACE * cfg.socket.idle_timeout,
    }
}

fn min_opt(a: u64, b: Option<u64>) -> u64 {
    b.map_or(a, |b| a.min(b))
}

fn run_sender(
    cfg: &ScenarioConfig,
    peers: &Peers,
    sock: UdpSocket,
    clock: HostClock,
) -> Result<SenderLogs, SocketError> {
    let mut net = Net::new(sock);
    let began = clock.now();
    let mut sync = SyncClient::new(peers.master(), cfg.clock.sync_interval, began);
    let mut sender = SenderEndpoint::new(cfg.sender_config(&cfg.hop1, 0));
    let mut capture = Capture::new(cfg.capture.clone(), cfg.seed);
    let frames = cfg.frame_count();
    let mut captures = Vec::new();
    let mut pending: BTreeMap<u32, VolumetricFrame> = BTreeMap::new();
    let mut start_at: Option<u64> = None;
    let mut next_tick = 0u64;
    let mut last_rx = None;

    loop {
        let now = clock.now();
        sync.poll(&net, now)?;
        if start_at.is_none() {
            if sync.offset.is_some() {
                start_at = Some(now + START_DELAY);
            } else if now >= began + STARTUP_GRACE * cfg.socket.idle_timeout {
                return Err(SocketError::MasterUnreachable(peers.master()));
            }
        }
        if let Some(t0) = start_at {
            while next_tick < frames && now >= t0 + cfg.capture.tick_offset(next_tick) {
                let tick = t0 + cfg.capture.tick_offset(next_tick);
                let (frame, rec) = capture.capture_tick(next_tick as u32, tick)?;
                if cfg.socket.busy_work {
                    busy_work(frame.payload());
                }
                captures.push(rec);
                pending.insert(rec.frame_id, frame);
                next_tick += 1;
            }
            let ready: Vec<u32> = pending.iter().filter(|(_, f)| f.capture_end() <= now).map(|(id, _)| *id).collect();
            for id in ready {
                let frame = pending.remove(&id).unwrap();
                sender.submit_frame(&frame, now)?;
            }
        }
        while let Some(out) = sender.poll_transmit(clock.now()) {
            net.send(&encode_packet(&out.packet), peers.relay)?;
        }

        let acked = sender.logs().filter(|l| l.ack_ts.is_some()).count() as u64;
        let all_handed = next_tick == frames && pending.is_empty();
        if all_handed && (acked == frames || (sender.backlog() == 0 && idle_exceeded(cfg, began, last_rx, now))) {
            break;
        }

        let mut until = now + 5 * MS;
        until = min_opt(until, sender.next_transmit_at());
        until = until.min(sync.due_at());
        if let Some(t0) = start_at {
            if next_tick < frames {
                until = until.min(t0 + cfg.capture.tick_offset(next_tick));
            }
            until = min_opt(until, pending.values().map(|f| f.capture_end()).min());
        }
        if let Some((packet, _)) = net.recv(&clock, until)? {
            let now = clock.now();
            last_rx = Some(now);
            if let Packet::Control(c) = packet {
                match &c.body {
                    ControlBody::Nack(ranges) => {
                        sender.retransmit(c.frame_id, ranges);
                    }
                    ControlBody::FrameAck => sender.on_frame_ack(c.frame_id, now),
                    ControlBody::SyncResp { .. } => sync.on_response(&c, now),
                    ControlBody::SyncReq { .. } => {}
                }
            }
        }
    }
    Ok(SenderLogs { capture: captures, send: sender.logs().cloned().collect(), offset: sync.offset.unwrap_or(0) })
}

fn run_relay(cfg: &ScenarioConfig, peers: &Peers, sock: UdpSocket, clock: HostClock) -> Result<RelayLogs, SocketError> {
    let mut net = Net::new(sock);
    let began = clock.now();
    let mut sync = SyncClient::new(peers.master(), cfg.clock.sync_interval, began);
    let mut relay = RelayNode::new(cfg.relay_config(), cfg.seed)?;
    relay.inject_stall(cfg.stall)?;
    let n = cfg.receivers;
    let frames = cfg.frame_count();
    let mut last_rx = None;

    loop {
        let now = clock.now();
        sync.poll(&net, now)?;
        if relay.next_timer_at().is_some_and(|t| t <= now) {
            let events = relay.on_timer(now)?;
            relay_upstream(&net, peers, events)?;
        }
        for i in 0..n {
            while let Some(out) = relay.poll_transmit(i, clock.now()) {
                net.send(&encode_packet(&out.packet), peers.receivers[i])?;
            }
        }

        let acked = (0..n)
            .all(|i| (0..frames as u32).all(|id| relay.downstream(i).log(id).is_some_and(|l| l.ack_ts.is_some())));
        if acked || idle_exceeded(cfg, began, last_rx, now) {
            break;
        }

        let mut until = (now + 5 * MS).min(sync.due_at());
        until = min_opt(until, relay.next_timer_at());
        for i in 0..n {
            until = min_opt(until, relay.next_transmit_at(i));
        }
        if let Some((packet, from)) = net.recv(&clock, until)? {
            let now = clock.now();
            last_rx = Some(now);
            match packet {
                Packet::Data(d) => {
                    let events = relay.on_upstream_packet(d, now)?;
                    relay_upstream(&net, peers, events)?;
                }
                Packet::Control(c) if matches!(c.body, ControlBody::SyncResp { .. }) => sync.on_response(&c, now),
                Packet::Control(c) => {
                    if let Some(i) = peers.receivers.iter().position(|a| *a == from) {
                        relay.on_downstream_control(i, &c, now);
                    }
                }
            }
        }
    }
    Ok(RelayLogs {
        upstream: relay.upstream().logs().cloned().collect(),
        downstream: (0..n).map(|i| relay.downstream(i).logs().cloned().collect()).collect(),
        distribution: (0..n).map(|i| (0..frames as u32).filter_map(|id| relay.distribution(id, i)).collect()).collect(),
        offset: sync.offset.unwrap_or(0),
    })
}

fn relay_upstream(net: &Net, peers: &Peers, events: Vec<RelayEvent>) -> Result<(), SocketError> {
    for ev in events {
        if let RelayEvent::ToUpstream(p) = ev {
            net.send_control(&p, peers.sender)?;
        }
    }
    Ok(())
}

fn run_receiver(
    cfg: &ScenarioConfig,
    peers: &Peers,
    index: usize,
    sock: UdpSocket,
    clock: HostClock,
) -> Result<ReceiverLogs, SocketError> {
    let mut net = Net::new(sock);
    let began = clock.now();
    let is_master = index == 0;
    let mut sync = (!is_master).then(|| SyncClient::new(peers.master(), cfg.clock.sync_interval, began));
    let mut rx = ReceiverEndpoint::new(cfg.receiver_config());
    let mut render = Render::new(cfg.render.clone(), cfg.seed, index as u64);
    let mut renders = Vec::new();
    let frames = cfg.frame_count();
    let mut finished = 0u64;
    let mut last_rx = None;

    loop {
        let now = clock.now();
        if let Some(s) = sync.as_mut() {
            s.poll(&net, now)?;
        }
        if rx.next_timer_at().is_some_and(|t| t <= now) {
            let events = rx.on_timer(now);
            finished += receiver_effects(&net, peers, &mut rx, &mut render, &mut renders, cfg, events)?;
        }
        let idle = idle_exceeded(cfg, began, last_rx, now);
        // The master keeps answering sync requests until everyone has gone quiet.
        if (finished >= frames && (!is_master || idle)) || idle {
            break;
        }

        let mut until = min_opt(now + 5 * MS, rx.next_timer_at());
        if let Some(s) = &sync {
            until = until.min(s.due_at());
        }
        if let Some((packet, from)) = net.recv(&clock, until)? {
            let now = clock.now();
            last_rx = Some(now);
            match packet {
                Packet::Data(d) => {
                    let events = rx.on_packet(d, now);
                    finished += receiver_effects(&net, peers, &mut rx, &mut render, &mut renders, cfg, events)?;
                }
                Packet::Control(c) => match &c.body {
                    ControlBody::SyncReq { .. } if is_master => {
                        if let Some(resp) = sync_response(&c, now, &clock) {
                            net.send_control(&resp, from)?;
                        }
                    }
                    ControlBody::SyncResp { .. } => {
                        if let Some(s) = sync.as_mut() {
                            s.on_response(&c, now);
                        }
                    }
                    _ => {}
                },
            }
        }
    }
    let offset = sync.and_then(|s| s.offset).unwrap_or(0);
    Ok(ReceiverLogs { receive: rx.logs().cloned().collect(), render: renders, offset })
}

fn receiver_effects(
    net: &Net,
    peers: &Peers,
    rx: &mut ReceiverEndpoint,
    render: &mut Render,
    renders: &mut Vec<RenderRecord>,
    cfg: &ScenarioConfig,
    events: Vec<RxEvent>,
) -> Result<u64, SocketError> {
    let mut finished = 0;
    for ev in events {
        match ev {
            RxEvent::FrameComplete(done) => {
                let ts = done.log.last_recv_ts.expect("completed frame has a last packet");
                if cfg.socket.busy_work {
                    busy_work(&done.payload);
                }
                renders.push(render.render_complete(done.frame_id, ts));
                net.send_control(&rx.frame_ack(done.frame_id, ts), peers.relay)?;
                finished += 1;
            }
            RxEvent::FrameAbandoned { .. } => finished += 1,
            RxEvent::NackEmitted(nack) => net.send_control(&nack, peers.relay)?,
            _ => {}
        }
    }
    Ok(finished)
}

fn bind(addr: SocketAddr) -> Result<UdpSocket, SocketError> {
    UdpSocket::bind(addr).map_err(io_err(format!("bind {addr}")))
}

fn check(cfg: &ScenarioConfig) -> Result<(), SocketError> {
    let mut socket_cfg = cfg.clone();
    socket_cfg.mode = Mode::Socket;
    let diags = socket_cfg.validate();
    if diags.is_empty() {
        Ok(())
    } else {
        Err(SocketError::Config(diags))
    }
}

/// Runs one role in this process and writes its logs into `dir`.
pub fn run_role(cfg: &ScenarioConfig, role: Role, dir: &Path) -> Result<RoleLogs, SocketError> {
    check(cfg)?;
    let peers = Peers::from_config(cfg)?;
    if let Role::Receiver(i) = role {
        if i >= peers.receivers.len() {
            return Err(SocketError::Config(vec![Diagnostic {
                key: "role".into(),
                value: role.to_string(),
                constraint: format!("receiver index must be below {}", peers.receivers.len()),
            }]));
        }
    }
    let sock = bind(peers.addr(role))?;
    let logs = run_bound(cfg, &peers, role, sock)?;
    write_role_logs(dir, &logs)?;
    Ok(logs)
}

fn run_bound(cfg: &ScenarioConfig, peers: &Peers, role: Role, sock: UdpSocket) -> Result<RoleLogs, SocketError> {
    let clock = HostClock::new();
    Ok(match role {
        Role::Sender => RoleLogs::Sender(run_sender(cfg, peers, sock, clock)?),
        Role::Relay => RoleLogs::Relay(run_relay(cfg, peers, sock, clock)?),
        Role::Receiver(i) => RoleLogs::Receiver(i, run_receiver(cfg, peers, i, sock, clock)?),
    })
}

/// Runs every role on its own thread in this process, then assembles. A port
/// of 0 in the configured addresses picks a free port.
pub fn run_loopback(cfg: &ScenarioConfig, dir: &Path) -> Result<SimOutput, SocketError> {
    check(cfg)?;
    let configured = Peers::from_config(cfg)?;
    let mut roles = vec![Role::Sender, Role::Relay];
    roles.extend((0..cfg.receivers).map(Role::Receiver));
    let socks: Vec<UdpSocket> = roles.iter().map(|r| bind(configured.addr(*r))).collect::<Result<_, _>>()?;
    let local = |s: &UdpSocket| s.local_addr().map_err(io_err("local_addr"));
    let peers = Peers {
        sender: local(&socks[0])?,
        relay: local(&socks[1])?,
        receivers: socks[2..].iter().map(local).collect::<Result<_, _>>()?,
    };
    let results: Vec<Result<RoleLogs, SocketError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = roles
            .iter()
            .zip(socks)
            .map(|(&role, sock)| {
                let peers = &peers;
                scope.spawn(move || run_bound(cfg, peers, role, sock))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or(Err(SocketError::Panicked))).collect()
    });
    let logs: Vec<RoleLogs> = results.into_iter().collect::<Result<_, _>>()?;
    for l in &logs {
        write_role_logs(dir, l)?;
    }
    assemble_logs(cfg, &LogSet::from_roles(cfg.receivers, logs))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), SocketError> {
    let log_err = |source| SocketError::Log { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(log_err)?;
    for r in rows {
        w.serialize(r).map_err(log_err)?;
    }
    w.flush().map_err(io_err(path.display().to_string()))
}

fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, SocketError> {
    let log_err = |source| SocketError::Log { path: path.to_path_buf(), source };
    let mut r = csv::Reader::from_path(path).map_err(log_err)?;
    r.deserialize().collect::<Result<_, _>>().map_err(log_err)
}

fn clock_row(offset: i64) -> [ClockRecord; 1] {
    [ClockRecord { offset_ns: offset }]
}

/// Writes one role's logs as CSV files named after the role.
pub fn write_role_logs(dir: &Path, logs: &RoleLogs) -> Result<(), SocketError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir.display().to_string()))?;
    match logs {
        RoleLogs::Sender(s) => {
            write_rows(&dir.join("sender_capture.csv"), &s.capture)?;
            write_rows(&dir.join("sender_send.csv"), &s.send)?;
            write_rows(&dir.join("sender_clock.csv"), &clock_row(s.offset))?;
        }
        RoleLogs::Relay(r) => {
            write_rows(&dir.join("relay_upstream.csv"), &r.upstream)?;
            for (i, (d, dist)) in r.downstream.iter().zip(&r.distribution).enumerate() {
                write_rows(&dir.join(format!("relay_downstream{i}.csv")), d)?;
                write_rows(&dir.join(format!("relay_distribution{i}.csv")), dist)?;
            }
            write_rows(&dir.join("relay_clock.csv"), &clock_row(r.offset))?;
        }
        RoleLogs::Receiver(i, r) => {
            write_rows(&dir.join(format!("receiver{i}_receive.csv")), &r.receive)?;
            write_rows(&dir.join(format!("receiver{i}_render.csv")), &r.render)?;
            write_rows(&dir.join(format!("receiver{i}_clock.csv")), &clock_row(r.offset))?;
        }
    }
    Ok(())
}

/// All role logs of one run.
#[derive(Debug, Clone, Default)]
pub struct LogSet {
    pub sender: SenderLogs,
    pub relay: RelayLogs,
    pub receivers: Vec<ReceiverLogs>,
}

impl LogSet {
    fn from_roles(receivers: usize, logs: Vec<RoleLogs>) -> Self {
        let mut set = LogSet { receivers: vec![ReceiverLogs::default(); receivers], ..Default::default() };
        for l in logs {
            match l {
                RoleLogs::Sender(s) => set.sender = s,
                RoleLogs::Relay(r) => set.relay = r,
                RoleLogs::Receiver(i, r) => set.receivers[i] = r,
            }
        }
        set
    }

    /// Loads the logs that the roles wrote into `dir`.
    pub fn load(dir: &Path, receivers: usize) -> Result<Self, SocketError> {
        let offset = |name: &str| -> Result<i64, SocketError> {
            Ok(read_rows::<ClockRecord>(&dir.join(name))?.first().map_or(0, |c| c.offset_ns))
        };
        Ok(LogSet {
            sender: SenderLogs {
                capture: read_rows(&dir.join("sender_capture.csv"))?,
                send: read_rows(&dir.join("sender_send.csv"))?,
                offset: offset("sender_clock.csv")?,
            },
            relay: RelayLogs {
                upstream: read_rows(&dir.join("relay_upstream.csv"))?,
                downstream: (0..receivers)
                    .map(|i| read_rows(&dir.join(format!("relay_downstream{i}.csv"))))
                    .collect::<Result<_, _>>()?,
                distribution: (0..receivers)
                    .map(|i| read_rows(&dir.join(format!("relay_distribution{i}.csv"))))
                    .collect::<Result<_, _>>()?,
                offset: offset("relay_clock.csv")?,
            },
            receivers: (0..receivers)
                .map(|i| {
                    Ok(ReceiverLogs {
                        receive: read_rows(&dir.join(format!("receiver{i}_receive.csv")))?,
                        render: read_rows(&dir.join(format!("receiver{i}_render.csv")))?,
                        offset: offset(&format!("receiver{i}_clock.csv"))?,
                    })
                })
                .collect::<Result<_, SocketError>>()?,
        })
    }
}

fn by_id<T, F: Fn(&T) -> u32>(rows: &[T], id: F) -> BTreeMap<u32, &T> {
    rows.iter().map(|r| (id(r), r)).collect()
}

/// Joins role logs into per-frame records.
pub fn assemble_logs(cfg: &ScenarioConfig, logs: &LogSet) -> Result<SimOutput, SocketError> {
    let capture = by_id(&logs.sender.capture, |r| r.frame_id);
    let send = by_id(&logs.sender.send, |r| r.frame_id);
    let upstream = by_id(&logs.relay.upstream, |r| r.frame_id);
    let mut records = Vec::new();
    for (i, rx) in logs.receivers.iter().enumerate() {
        let downstream = by_id(&logs.relay.downstream[i], |r| r.frame_id);
        let distribution = by_id(&logs.relay.distribution[i], |r| r.frame_id);
        let receive = by_id(&rx.receive, |r| r.frame_id);
        let render = by_id(&rx.render, |r| r.frame_id);
        let offsets = PathOffsets { sender: logs.sender.offset, relay: logs.relay.offset, receiver: rx.offset };
        let mut rows = Vec::new();
        for id in 0..cfg.frame_count() as u32 {
            let src = RecordSources {
                capture: capture.get(&id).copied(),
                sender: send.get(&id).copied(),
                relay_upstream: upstream.get(&id).copied(),
                relay_downstream: downstream.get(&id).copied(),
                distribution: distribution.get(&id).copied(),
                receiver: receive.get(&id).copied(),
                render: render.get(&id).copied(),
                offsets,
            };
            let completed = src.receiver.is_some_and(|r| r.completed) && src.render.is_some();
            rows.push(if completed { assemble_record(id, &src)? } else { partial_record(id, &src) });
        }
        records.push(rows);
    }
    let summary = metrics::summarize(&records[0])?;
    Ok(SimOutput { records, summary, trace: Vec::new(), stats: SimStats::default() })
}

/// Loads role logs from `dir` and joins them.
pub fn assemble(cfg: &ScenarioConfig, dir: &Path) -> Result<SimOutput, SocketError> {
    assemble_logs(cfg, &LogSet::load(dir, cfg.receivers)?)
}
