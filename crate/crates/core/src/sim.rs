//! Deterministic discrete-event runs: the sender → relay → receivers
//! pipeline, the probe experiment and the bandwidth sweep.
//!
//! All nodes keep their own [`NodeClock`]; endpoints only ever see local
//! time, and the event queue runs on true (master) time. Receiver 0 is the
//! clock master. The run starts at one second of virtual time so that lagging
//! clocks never read negative.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use bytes::Bytes;
use thiserror::Error;

use crate::app::{Capture, Render};
use crate::clocksync::{one_way_delay, relative_offset, sync_exchange, NodeClock, SyncError, SyncPath};
use crate::config::{Diagnostic, Experiment, ScenarioConfig};
use crate::frame::{ControlBody, ControlPacket, DataPacket, FrameError, VolumetricFrame};
use crate::metrics::{
    self, assemble_record, partial_record, CaptureRecord, FrameLatencyRecord, LinkCounts, MetricsError, PathOffsets,
    RecordSources, RenderRecord, RunSummary,
};
use crate::netem::{
    frame_serialization_ns, run_probe_experiment, EventQueue, LinkRng, LinkState, NodeStageModel, SizeStats,
    StageBreakdown, STAGE_NAMES,
};
use crate::relay::{RelayError, RelayEvent, RelayNode};
use crate::rng;
use crate::time::{fmt_ms, MS, SEC};
use crate::transport::{Outgoing, ReceiverEndpoint, RxEvent, SenderEndpoint, TransportError};

/// Virtual time of the first sync exchange.
pub const START: u64 = SEC;
/// Gap between the first sync exchange and the first capture.
const SETTLE: u64 = 10 * MS;
const SYNC_RETRY_INTERVAL: u64 = 10 * MS;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Config(Vec<Diagnostic>),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Relay(#[from] RelayError),
    #[error("clock sync: {0}")]
    Sync(#[from] SyncError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// One data packet's trip across one hop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketTrace {
    /// 0 for hop 1, `1 + i` for hop 2 towards receiver `i`.
    pub link: u16,
    pub frame_id: u32,
    pub segment: u16,
    pub seq: u16,
    pub retransmit: bool,
    pub lost: bool,
    /// True emission time.
    pub sent_at: u64,
    /// True delivery time (also for lost packets: when it would have arrived).
    pub deliver_at: u64,
    pub stages: StageBreakdown,
    /// Send timestamp carried in the header, sender clock.
    pub embedded_ts: u64,
    /// Receive timestamp, receiver clock; `None` if lost.
    pub recv_ts: Option<u64>,
    /// `recv_ts - embedded_ts` without clock correction.
    pub raw_delay: Option<i64>,
    /// Offset-corrected one-way delay.
    pub corrected_delay: Option<i64>,
}

impl PacketTrace {
    /// `hop1`, or `hop2.<receiver>`.
    pub fn link_name(&self) -> String {
        match self.link {
            0 => "hop1".into(),
            l => format!("hop2.{}", l - 1),
        }
    }

    pub fn true_delay(&self) -> u64 {
        self.deliver_at - self.sent_at
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimStats {
    pub events: u64,
    pub end_time: u64,
    pub sync_exchanges: u64,
    pub capture_overruns: u64,
    pub integrity_failures: u64,
    pub frames_verified: u64,
    pub clock_anomalies: u64,
    pub control_packets: u64,
    pub control_lost: u64,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    /// Per receiver, one record per captured frame in frame order.
    pub records: Vec<Vec<FrameLatencyRecord>>,
    /// Statistics of receiver 0.
    pub summary: RunSummary,
    pub trace: Vec<PacketTrace>,
    pub stats: SimStats,
}

#[derive(Debug)]
enum Ev {
    Sync,
    Capture(u32),
    Handoff(u32),
    SenderWake,
    RelayWake(usize),
    RelayTimer,
    ReceiverTimer(usize),
    Data { link: usize, packet: DataPacket, trace: Option<usize> },
    Control { link: usize, packet: ControlPacket },
}

const SENDER: usize = 0;
const RELAY: usize = 1;

fn receiver_node(i: usize) -> usize {
    2 + i
}

/// Armed time of a self-rescheduling event, so that at most one live copy
/// sits in the queue.
#[derive(Default, Clone, Copy)]
struct Slot(Option<u64>);

impl Slot {
    fn arm(&mut self, q: &mut EventQueue<Ev>, at: u64, ev: Ev) {
        let at = at.max(q.now());
        if self.0.is_some_and(|s| s <= at) {
            return;
        }
        self.0 = Some(at);
        q.schedule(at, ev);
    }

    fn fired(&mut self, now: u64) {
        if self.0 == Some(now) {
            self.0 = None;
        }
    }
}

struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    q: EventQueue<Ev>,
    clocks: Vec<NodeClock>,
    sync_rng: rng::StreamRng,
    capture: Capture,
    renders: Vec<Render>,
    sender: SenderEndpoint,
    relay: RelayNode,
    receivers: Vec<ReceiverEndpoint>,
    data_links: Vec<LinkState>,
    ctrl_links: Vec<LinkState>,
    link_names: Vec<String>,

    pending: BTreeMap<u32, VolumetricFrame>,
    /// Sent payload and the number of receivers yet to finish the frame.
    in_flight: BTreeMap<u32, (Bytes, usize)>,
    captures: BTreeMap<u32, CaptureRecord>,
    rendered: Vec<BTreeMap<u32, RenderRecord>>,
    offsets: Vec<BTreeMap<u32, PathOffsets>>,
    finished: Vec<u64>,

    sender_wake: Slot,
    relay_wake: Vec<Slot>,
    relay_timer: Slot,
    rx_timer: Vec<Slot>,

    trace: Option<Vec<PacketTrace>>,
    stats: SimStats,
    frames: u64,
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a ScenarioConfig) -> Result<Self, SimError> {
        let n = cfg.receivers;
        let c = &cfg.clock;
        let mut clocks = vec![
            NodeClock::slave(c.sender_offset, c.sender_drift_ppm, START),
            NodeClock::slave(c.relay_offset, c.relay_drift_ppm, START),
            NodeClock::master(),
        ];
        clocks.extend((1..n).map(|_| NodeClock::slave(c.receiver_offset, 0.0, START)));

        let mut relay = RelayNode::new(cfg.relay_config(), cfg.seed)?;
        relay.inject_stall(cfg.stall)?;

        let link = |model: &crate::netem::LinkModel, tx: &NodeStageModel, rx: &NodeStageModel, index| {
            LinkState::new(model.clone(), tx.clone(), rx.clone(), LinkRng::new(cfg.seed, index))
        };
        let mut data_links = vec![link(&cfg.hop1.link, &cfg.sender_stages, &cfg.relay_stages, 0)];
        let mut ctrl_links = vec![link(&cfg.hop1.link, &cfg.relay_stages, &cfg.sender_stages, 1)];
        let mut link_names = vec!["hop1".to_string()];
        for i in 0..n {
            let idx = 2 * (i as u64 + 1);
            data_links.push(link(&cfg.hop2.link, &cfg.relay_stages, &cfg.receiver_stages, idx));
            ctrl_links.push(link(&cfg.hop2.link, &cfg.receiver_stages, &cfg.relay_stages, idx + 1));
            link_names.push(format!("hop2.{i}"));
        }

        Ok(Self {
            cfg,
            q: EventQueue::new(START),
            clocks,
            sync_rng: rng::stream(cfg.seed, "sync-loss", 0),
            capture: Capture::new(cfg.capture.clone(), cfg.seed),
            renders: (0..n).map(|i| Render::new(cfg.render.clone(), cfg.seed, i as u64)).collect(),
            sender: SenderEndpoint::new(cfg.sender_config(&cfg.hop1, 0)),
            relay,
            receivers: (0..n).map(|_| ReceiverEndpoint::new(cfg.receiver_config())).collect(),
            data_links,
            ctrl_links,
            link_names,
            pending: BTreeMap::new(),
            in_flight: BTreeMap::new(),
            captures: BTreeMap::new(),
            rendered: vec![BTreeMap::new(); n],
            offsets: vec![BTreeMap::new(); n],
            finished: vec![0; n],
            sender_wake: Slot::default(),
            relay_wake: vec![Slot::default(); n],
            relay_timer: Slot::default(),
            rx_timer: vec![Slot::default(); n],
            trace: cfg.trace.then(Vec::new),
            stats: SimStats::default(),
            frames: cfg.frame_count(),
        })
    }

    fn local(&self, node: usize) -> u64 {
        self.clocks[node].read(self.q.now())
    }

    fn to_true(&self, node: usize, local: u64) -> u64 {
        self.clocks[node].to_true(local).max(self.q.now())
    }

    fn all_finished(&self) -> bool {
        self.finished.iter().all(|&f| f >= self.frames)
    }

    fn run(mut self) -> Result<SimOutput, SimError> {
        let first_capture = START + SETTLE;
        let last_capture = first_capture + self.cfg.capture.tick_offset(self.frames.saturating_sub(1));
        let horizon = last_capture + self.cfg.drain;
        self.q.schedule(START, Ev::Sync);
        for k in 0..self.frames {
            self.q.schedule(first_capture + self.cfg.capture.tick_offset(k), Ev::Capture(k as u32));
        }
        while let Some(t) = self.q.peek_time() {
            if t > horizon {
                break;
            }
            let (_, ev) = self.q.step().unwrap();
            self.stats.events += 1;
            self.dispatch(ev)?;
        }
        self.stats.end_time = self.q.now();
        self.finish()
    }

    fn dispatch(&mut self, ev: Ev) -> Result<(), SimError> {
        let now = self.q.now();
        match ev {
            Ev::Sync => {
                self.sync_all()?;
                if !self.all_finished() {
                    self.q.schedule(now + self.cfg.clock.sync_interval, Ev::Sync);
                }
            }
            Ev::Capture(id) => {
                let local = self.local(SENDER);
                let (frame, rec) = self.capture.capture_tick(id, local)?;
                self.in_flight.insert(id, (frame.payload().clone(), self.cfg.receivers));
                self.captures.insert(id, rec);
                self.pending.insert(id, frame);
                let at = self.to_true(SENDER, rec.capture_end);
                self.q.schedule(at, Ev::Handoff(id));
            }
            Ev::Handoff(id) => {
                let frame = self.pending.remove(&id).expect("captured frame awaiting handoff");
                self.sender.submit_frame(&frame, self.local(SENDER))?;
                self.pump_sender();
            }
            Ev::SenderWake => {
                self.sender_wake.fired(now);
                self.pump_sender();
            }
            Ev::RelayWake(i) => {
                self.relay_wake[i].fired(now);
                self.pump_relay(i);
            }
            Ev::RelayTimer => {
                self.relay_timer.fired(now);
                let events = self.relay.on_timer(self.local(RELAY))?;
                self.relay_effects(events);
                self.arm_relay_timer();
            }
            Ev::ReceiverTimer(i) => {
                self.rx_timer[i].fired(now);
                let local = self.local(receiver_node(i));
                let events = self.receivers[i].on_timer(local);
                self.receiver_effects(i, events);
                self.arm_rx_timer(i);
            }
            Ev::Data { link, packet, trace } => self.deliver_data(link, packet, trace)?,
            Ev::Control { link, packet } => self.deliver_control(link, packet),
        }
        Ok(())
    }

    fn sync_all(&mut self) -> Result<(), SimError> {
        let c = &self.cfg.clock;
        let path = SyncPath {
            slave_to_master: c.sync_delay,
            master_to_slave: c.sync_reverse_delay,
            turnaround: 0,
            loss_rate: c.sync_loss_rate,
            max_retries: c.sync_retries,
            retry_interval: SYNC_RETRY_INTERVAL,
        };
        let now = self.q.now();
        let (master, slaves) = (2, (0..self.clocks.len()).filter(|&n| n != 2));
        for n in slaves {
            sync_exchange(&self.clocks[n], &self.clocks[master], &path, now, &mut self.sync_rng)?;
            self.stats.sync_exchanges += 1;
        }
        Ok(())
    }

    fn emit(&mut self, link: usize, tx_node: usize, out: Outgoing) {
        let sent_at = self.to_true(tx_node, out.start);
        let transit = self.data_links[link].transmit(sent_at, out.wire_bits);
        let trace = self.trace.as_mut().map(|t| {
            t.push(PacketTrace {
                link: link as u16,
                frame_id: out.packet.frame_id,
                segment: out.packet.segment_index,
                seq: out.packet.packet_seq,
                retransmit: out.retransmit,
                lost: transit.lost,
                sent_at,
                deliver_at: transit.deliver_at,
                stages: transit.stages,
                embedded_ts: out.packet.send_timestamp,
                recv_ts: None,
                raw_delay: None,
                corrected_delay: None,
            });
            t.len() - 1
        });
        if !transit.lost {
            self.q.schedule(transit.deliver_at, Ev::Data { link, packet: out.packet, trace });
        }
    }

    fn send_control(&mut self, link: usize, tx_node: usize, packet: ControlPacket) {
        let bits = packet.wire_len() as u64 * 8 + self.cfg.overhead_bits;
        let transit = self.ctrl_links[link].transmit(self.q.now(), bits);
        self.stats.control_packets += 1;
        if transit.lost {
            self.stats.control_lost += 1;
            return;
        }
        let _ = tx_node;
        self.q.schedule(transit.deliver_at, Ev::Control { link, packet });
    }

    fn pump_sender(&mut self) {
        let local = self.local(SENDER);
        while let Some(out) = self.sender.poll_transmit(local) {
            self.emit(0, SENDER, out);
        }
        if let Some(next) = self.sender.next_transmit_at() {
            let at = self.to_true(SENDER, next);
            self.sender_wake.arm(&mut self.q, at, Ev::SenderWake);
        }
    }

    fn pump_relay(&mut self, i: usize) {
        let local = self.local(RELAY);
        while let Some(out) = self.relay.poll_transmit(i, local) {
            self.emit(1 + i, RELAY, out);
        }
        if let Some(next) = self.relay.next_transmit_at(i) {
            let at = self.to_true(RELAY, next);
            self.relay_wake[i].arm(&mut self.q, at, Ev::RelayWake(i));
        }
    }

    fn arm_relay_timer(&mut self) {
        if let Some(next) = self.relay.next_timer_at() {
            let at = self.to_true(RELAY, next);
            self.relay_timer.arm(&mut self.q, at, Ev::RelayTimer);
        }
    }

    fn arm_rx_timer(&mut self, i: usize) {
        if let Some(next) = self.receivers[i].next_timer_at() {
            let at = self.to_true(receiver_node(i), next);
            self.rx_timer[i].arm(&mut self.q, at, Ev::ReceiverTimer(i));
        }
    }

    fn relay_effects(&mut self, events: Vec<RelayEvent>) {
        for ev in events {
            if let RelayEvent::ToUpstream(p) = ev {
                self.send_control(0, RELAY, p);
            }
        }
    }

    fn receiver_effects(&mut self, i: usize, events: Vec<RxEvent>) {
        let node = receiver_node(i);
        for ev in events {
            match ev {
                RxEvent::FrameComplete(done) => {
                    let local = self.local(node);
                    let rec = self.renders[i].render_complete(done.frame_id, local);
                    self.rendered[i].insert(done.frame_id, rec);
                    self.offsets[i].insert(
                        done.frame_id,
                        PathOffsets {
                            sender: self.clocks[SENDER].estimated_offset(),
                            relay: self.clocks[RELAY].estimated_offset(),
                            receiver: self.clocks[node].estimated_offset(),
                        },
                    );
                    self.settle(done.frame_id, Some(&done.payload));
                    self.finished[i] += 1;
                    let ack = self.receivers[i].frame_ack(done.frame_id, local);
                    self.send_control(1 + i, node, ack);
                }
                RxEvent::FrameAbandoned { frame_id, .. } => {
                    self.settle(frame_id, None);
                    self.finished[i] += 1;
                }
                RxEvent::NackEmitted(nack) => self.send_control(1 + i, node, nack),
                _ => {}
            }
        }
    }

    fn settle(&mut self, frame_id: u32, received: Option<&Bytes>) {
        let Some((sent, left)) = self.in_flight.get_mut(&frame_id) else {
            return;
        };
        if let Some(got) = received {
            if got == sent {
                self.stats.frames_verified += 1;
            } else {
                self.stats.integrity_failures += 1;
            }
        }
        *left -= 1;
        if *left == 0 {
            self.in_flight.remove(&frame_id);
        }
    }

    fn deliver_data(&mut self, link: usize, packet: DataPacket, trace: Option<usize>) -> Result<(), SimError> {
        let (tx_node, rx_node) = if link == 0 { (SENDER, RELAY) } else { (RELAY, receiver_node(link - 1)) };
        let recv = self.local(rx_node);
        if let (Some(idx), Some(t)) = (trace, self.trace.as_mut()) {
            let row = &mut t[idx];
            let offset = relative_offset(&self.clocks[tx_node], &self.clocks[rx_node]);
            row.recv_ts = Some(recv);
            row.raw_delay = Some(recv as i64 - row.embedded_ts as i64);
            row.corrected_delay = Some(recv as i64 - (row.embedded_ts as i64 + offset));
            if one_way_delay(recv, row.embedded_ts, offset).anomaly.is_some() {
                self.stats.clock_anomalies += 1;
            }
        }
        if link == 0 {
            let events = self.relay.on_upstream_packet(packet, recv)?;
            self.relay_effects(events);
            for i in 0..self.cfg.receivers {
                self.pump_relay(i);
            }
            self.arm_relay_timer();
        } else {
            let i = link - 1;
            let events = self.receivers[i].on_packet(packet, recv);
            self.receiver_effects(i, events);
            self.arm_rx_timer(i);
        }
        Ok(())
    }

    fn deliver_control(&mut self, link: usize, packet: ControlPacket) {
        if link == 0 {
            let now = self.local(SENDER);
            match &packet.body {
                ControlBody::Nack(ranges) => {
                    self.sender.retransmit(packet.frame_id, ranges);
                }
                ControlBody::FrameAck => self.sender.on_frame_ack(packet.frame_id, now),
                _ => {}
            }
            self.pump_sender();
        } else {
            let i = link - 1;
            let now = self.local(RELAY);
            self.relay.on_downstream_control(i, &packet, now);
            self.pump_relay(i);
        }
    }

    fn finish(self) -> Result<SimOutput, SimError> {
        let mut records = Vec::with_capacity(self.cfg.receivers);
        for i in 0..self.cfg.receivers {
            let node = receiver_node(i);
            let mut rows = Vec::with_capacity(self.frames as usize);
            for id in 0..self.frames as u32 {
                let distribution = self.relay.distribution(id, i);
                let offsets = self.offsets[i].get(&id).copied().unwrap_or(PathOffsets {
                    sender: self.clocks[SENDER].estimated_offset(),
                    relay: self.clocks[RELAY].estimated_offset(),
                    receiver: self.clocks[node].estimated_offset(),
                });
                let src = RecordSources {
                    capture: self.captures.get(&id),
                    sender: self.sender.log(id),
                    relay_upstream: self.relay.upstream().log(id),
                    relay_downstream: self.relay.downstream(i).log(id),
                    distribution: distribution.as_ref(),
                    receiver: self.receivers[i].log(id),
                    render: self.rendered[i].get(&id),
                    offsets,
                };
                let completed = src.receiver.is_some_and(|r| r.completed);
                rows.push(if completed { assemble_record(id, &src)? } else { partial_record(id, &src) });
            }
            records.push(rows);
        }

        let mut summary = metrics::summarize(&records[0])?;
        let mut links = Vec::new();
        for (name, l) in self.link_names.iter().zip(&self.data_links) {
            let s = l.stats();
            links.push(LinkCounts { link: name.clone(), sent: s.sent, delivered: s.delivered, lost: s.lost });
        }
        summary.links = links;
        let sc = self.sender.counters();
        let rc = self.relay.counters();
        let ds_rtx: u64 = (0..self.cfg.receivers).map(|i| self.relay.downstream(i).counters().retransmissions).sum();
        let ds_stale: u64 = (0..self.cfg.receivers).map(|i| self.relay.downstream(i).counters().stale_nacks).sum();
        let rx_nacks: u64 = self.receivers.iter().map(|r| r.counters().nacks_sent).sum();
        let rx_expired: u64 = self.receivers.iter().map(|r| r.counters().expired_packets).sum();
        let anomalies: u64 = records[0].iter().map(|r| r.clock_anomalies as u64).sum();
        let mut stats = self.stats;
        stats.capture_overruns = self.capture.overruns();
        summary.counters = vec![
            ("hop1_retransmissions".into(), sc.retransmissions),
            ("hop2_retransmissions".into(), ds_rtx),
            ("hop1_nacks".into(), self.relay.upstream().counters().nacks_sent),
            ("hop2_nacks".into(), rx_nacks),
            ("stale_nacks".into(), sc.stale_nacks + ds_stale),
            ("expired_packets".into(), self.relay.upstream().counters().expired_packets + rx_expired),
            ("relay_abandoned_frames".into(), rc.upstream_abandoned),
            ("stalled_frames".into(), rc.stalled_frames),
            ("backpressure_events".into(), rc.backpressure_events),
            ("capture_overruns".into(), stats.capture_overruns),
            ("clock_anomalies".into(), anomalies),
            ("integrity_failures".into(), stats.integrity_failures),
            ("sync_exchanges".into(), stats.sync_exchanges),
        ];
        Ok(SimOutput { records, summary, trace: self.trace.unwrap_or_default(), stats })
    }
}

/// Runs the frame pipeline.
pub fn run_pipeline(cfg: &ScenarioConfig) -> Result<SimOutput, SimError> {
    let diags = cfg.validate();
    if !diags.is_empty() {
        return Err(SimError::Config(diags));
    }
    Sim::new(cfg)?.run()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub hop1: Vec<SizeStats>,
    pub hop2: Vec<SizeStats>,
}

/// Probes both hops: sender → relay and relay → receiver.
pub fn run_probe(cfg: &ScenarioConfig) -> ProbeReport {
    let run = |link, tx, rx, index| {
        run_probe_experiment(
            link,
            tx,
            rx,
            &cfg.probe_sizes,
            cfg.probe_samples,
            rng::stream_seed(cfg.seed, "probe", index),
        )
    };
    ProbeReport {
        hop1: run(&cfg.hop1.link, &cfg.sender_stages, &cfg.relay_stages, 0),
        hop2: run(&cfg.hop2.link, &cfg.relay_stages, &cfg.receiver_stages, 1),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub bandwidth_bps: u64,
    /// Serialization of one frame's wire bits at this rate.
    pub analytic_tx_ns: u64,
    pub output: SimOutput,
}

/// The pipeline at each sweep bandwidth; both hops pace at the link rate.
pub fn run_sweep(cfg: &ScenarioConfig) -> Result<Vec<SweepPoint>, SimError> {
    cfg.sweep_bandwidths
        .iter()
        .map(|&bw| {
            let mut c = cfg.clone();
            c.experiment = Experiment::Pipeline;
            for hop in [&mut c.hop1, &mut c.hop2] {
                hop.pacing_bps = bw;
                hop.link.bandwidth_bps = bw;
            }
            let frame_bytes = c.capture.frame_bytes();
            let packets = crate::frame::packets_per_frame(frame_bytes, c.segment_payload_size, c.packet_payload_size);
            let analytic_tx_ns = frame_serialization_ns(frame_bytes as u64, bw)
                + crate::time::serialization_ns(packets as u64 * c.overhead_bits, bw);
            Ok(SweepPoint { bandwidth_bps: bw, analytic_tx_ns, output: run_pipeline(&c)? })
        })
        .collect()
}

impl PartialEq for SimOutput {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records
            && self.summary == other.summary
            && self.trace == other.trace
            && self.stats == other.stats
    }
}

#[derive(Debug, Clone)]
pub enum RunReport {
    Pipeline(SimOutput),
    Probe(ProbeReport),
    Sweep(Vec<SweepPoint>),
}

/// Validates and runs whatever experiment the config selects.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunReport, SimError> {
    let diags = cfg.validate();
    if !diags.is_empty() {
        return Err(SimError::Config(diags));
    }
    Ok(match cfg.experiment {
        Experiment::Pipeline => RunReport::Pipeline(run_pipeline(cfg)?),
        Experiment::Probe => RunReport::Probe(run_probe(cfg)),
        Experiment::Sweep => RunReport::Sweep(run_sweep(cfg)?),
    })
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> SimError + '_ {
    move |source| SimError::Metrics(MetricsError::Io { path: path.to_path_buf(), source })
}

fn write_pipeline(dir: &Path, out: &SimOutput, prefix: &str) -> Result<Vec<PathBuf>, SimError> {
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let mut files = Vec::new();
    let frames = dir.join(format!("{prefix}frames.csv"));
    let hops = dir.join(format!("{prefix}hops.csv"));
    let summary = dir.join(format!("{prefix}summary.csv"));
    metrics::write_frames_csv(&frames, &out.records[0])?;
    metrics::write_hops_csv(&hops, &out.records[0])?;
    metrics::write_summary_csv(&summary, &out.summary)?;
    files.extend([frames, hops, summary]);
    for (i, recs) in out.records.iter().enumerate().skip(1) {
        let f = dir.join(format!("{prefix}frames_rx{i}.csv"));
        let h = dir.join(format!("{prefix}hops_rx{i}.csv"));
        metrics::write_frames_csv(&f, recs)?;
        metrics::write_hops_csv(&h, recs)?;
        files.extend([f, h]);
    }
    if !out.trace.is_empty() {
        let path = dir.join(format!("{prefix}trace.csv"));
        write_trace(&path, &out.trace)?;
        files.push(path);
    }
    Ok(files)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One line per packet event.
pub fn write_trace(path: &Path, rows: &[PacketTrace]) -> Result<(), SimError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io(path))?);
    let mut header = vec!["time_ns", "link", "frame_id", "segment", "seq", "retransmit", "lost"];
    header.extend(&STAGE_NAMES);
    header.extend(["embedded_ts", "recv_ts", "raw_delay_ns", "corrected_delay_ns"]);
    writeln!(w, "{}", header.join(",")).map_err(io(path))?;
    for r in rows {
        let stages: Vec<String> =
            r.stages.as_array().iter().chain([&r.stages.total()]).map(|v| v.to_string()).collect();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.deliver_at,
            r.link_name(),
            r.frame_id,
            r.segment,
            r.seq,
            u8::from(r.retransmit),
            u8::from(r.lost),
            stages.join(","),
            r.embedded_ts,
            opt(r.recv_ts),
            opt(r.raw_delay),
            opt(r.corrected_delay)
        )
        .map_err(io(path))?;
    }
    w.flush().map_err(io(path))
}

fn write_probe(dir: &Path, report: &ProbeReport) -> Result<Vec<PathBuf>, SimError> {
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let path = dir.join("probe.csv");
    let mut body = String::from("segment,packet_bytes,stage,mean_ns,p50_ns,p99_ns,max_ns,sent,lost\n");
    for (name, sizes) in [("hop1", &report.hop1), ("hop2", &report.hop2)] {
        for s in sizes {
            for (stage, st) in STAGE_NAMES.iter().zip(&s.stages) {
                body.push_str(&format!(
                    "{name},{},{stage},{:.3},{},{},{},{},{}\n",
                    s.packet_bytes, st.mean_ns, st.p50_ns, st.p99_ns, st.max_ns, s.sent, s.lost
                ));
            }
        }
    }
    std::fs::write(&path, body).map_err(io(&path))?;
    Ok(vec![path])
}

fn write_sweep(dir: &Path, points: &[SweepPoint]) -> Result<Vec<PathBuf>, SimError> {
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let path = dir.join("sweep.csv");
    let mut body = String::from(
        "bandwidth_bps,analytic_tx_ms,protocol_tx1_ms,protocol_tx2_ms,frame_l_ms,service_l_ms,frames_completed\n",
    );
    let mut files = Vec::new();
    for p in points {
        let s = &p.output.summary;
        let mean = |m: &str| s.metric(m).map(|x| format!("{:.6}", x.mean_ns / 1e6)).unwrap_or_default();
        body.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.bandwidth_bps,
            fmt_ms(p.analytic_tx_ns),
            mean("protocol_tx1"),
            mean("protocol_tx2"),
            mean("frame_l"),
            mean("service_l"),
            s.frames_completed
        ));
        files.extend(write_pipeline(dir, &p.output, &format!("bw{}_", p.bandwidth_bps))?);
    }
    std::fs::write(&path, body).map_err(io(&path))?;
    files.insert(0, path);
    Ok(files)
}

/// Writes the report files of a run into `dir`.
pub fn write_outputs(dir: &Path, report: &RunReport) -> Result<Vec<PathBuf>, SimError> {
    match report {
        RunReport::Pipeline(out) => write_pipeline(dir, out, ""),
        RunReport::Probe(p) => write_probe(dir, p),
        RunReport::Sweep(points) => write_sweep(dir, points),
    }
}

/// Console summary of a run.
pub fn render_report(report: &RunReport, out: &mut impl Write) -> std::io::Result<()> {
    match report {
        RunReport::Pipeline(o) => {
            metrics::render_table(&o.summary, out)?;
            for (name, v) in &o.summary.counters {
                if *v > 0 {
                    writeln!(out, "{name}: {v}")?;
                }
            }
        }
        RunReport::Probe(p) => {
            writeln!(out, "{:<6} {:>7} {:>10} {:>10} {:>10}", "hop", "bytes", "mean_us", "p99_us", "max_us")?;
            for (name, sizes) in [("hop1", &p.hop1), ("hop2", &p.hop2)] {
                for s in sizes {
                    let t = s.total();
                    writeln!(
                        out,
                        "{name:<6} {:>7} {:>10.3} {:>10.3} {:>10.3}",
                        s.packet_bytes,
                        t.mean_ns / 1e3,
                        t.p99_ns as f64 / 1e3,
                        t.max_ns as f64 / 1e3
                    )?;
                }
            }
        }
        RunReport::Sweep(points) => {
            writeln!(
                out,
                "{:>14} {:>14} {:>14} {:>12}",
                "bandwidth_bps", "analytic_ms", "protocol_tx_ms", "frame_l_ms"
            )?;
            for p in points {
                let s = &p.output.summary;
                writeln!(
                    out,
                    "{:>14} {:>14.3} {:>14.3} {:>12.3}",
                    p.bandwidth_bps,
                    p.analytic_tx_ns as f64 / 1e6,
                    s.mean_ms("protocol_tx1").unwrap_or(f64::NAN),
                    s.mean_ms("frame_l").unwrap_or(f64::NAN)
                )?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relay::ForwardPolicy;
    use crate::time::US;

    fn small(seed: u64) -> ScenarioConfig {
        let mut c = ScenarioConfig { seed, duration_s: 0.5, ..Default::default() };
        c.capture.color_bytes = 60_000;
        c.capture.depth_bytes = 40_000;
        c.capture.audio_bytes = 3_000;
        c
    }

    #[test]
    fn lossless_run_completes_every_frame() {
        let out = run_pipeline(&small(1)).unwrap();
        let recs = &out.records[0];
        assert_eq!(recs.len(), 15);
        assert!(recs.iter().all(|r| r.completed));
        assert_eq!(out.stats.integrity_failures, 0);
        assert_eq!(out.stats.frames_verified, 15);
        assert_eq!(out.summary.frames_completed, 15);
    }

    #[test]
    fn service_equals_display_minus_capture() {
        let cfg = small(2);
        let out = run_pipeline(&cfg).unwrap();
        for r in &out.records[0] {
            assert_eq!(r.service_l.unwrap(), r.app_tx.unwrap() + r.frame_l.unwrap() + r.app_rx.unwrap());
            assert_eq!(r.frame_tx, r.protocol_tx1, "idle sender starts at handoff");
        }
    }

    #[test]
    fn identical_seeds_replay_exactly() {
        let mut cfg = small(3);
        cfg.hop1.link.loss_rate = 0.01;
        cfg.trace = true;
        assert_eq!(run_pipeline(&cfg).unwrap(), run_pipeline(&cfg).unwrap());
    }

    #[test]
    fn loss_is_repaired() {
        let mut cfg = small(4);
        cfg.hop1.link.loss_rate = 0.05;
        cfg.hop2.link.loss_rate = 0.05;
        cfg.deadline = None;
        let out = run_pipeline(&cfg).unwrap();
        assert!(out.records[0].iter().all(|r| r.completed));
        assert!(out.records[0].iter().map(|r| r.retransmits).sum::<u32>() > 0);
        assert_eq!(out.stats.integrity_failures, 0);
    }

    #[test]
    fn fan_out_to_several_receivers() {
        let mut cfg = small(5);
        cfg.receivers = 3;
        cfg.clock.receiver_offset = 250 * US as i64;
        let out = run_pipeline(&cfg).unwrap();
        assert_eq!(out.records.len(), 3);
        for recs in &out.records {
            assert!(recs.iter().all(|r| r.completed));
        }
        assert_eq!(out.stats.frames_verified, 45);
    }

    #[test]
    fn cut_through_never_slower_than_store_and_forward() {
        let ct = run_pipeline(&small(6)).unwrap();
        let sf = run_pipeline(&ScenarioConfig { relay_policy: ForwardPolicy::StoreAndForward, ..small(6) }).unwrap();
        for (a, b) in ct.records[0].iter().zip(&sf.records[0]) {
            assert!(a.server_dist.unwrap() <= b.server_dist.unwrap());
        }
    }

    #[test]
    fn deterministic_distribution_has_no_variance() {
        let mut cfg = small(7);
        cfg.hop1.link.switching_max = cfg.hop1.link.switching_min;
        cfg.hop2.link.switching_max = cfg.hop2.link.switching_min;
        let out = run_pipeline(&cfg).unwrap();
        let d: Vec<_> = out.records[0].iter().map(|r| r.server_dist.unwrap()).collect();
        assert!(d.windows(2).all(|w| w[0] == w[1]), "{d:?}");
    }

    #[test]
    fn stalls_surface_in_distribution_time() {
        let mut cfg = small(8);
        cfg.stall = crate::relay::StallModel { probability: 1.0, duration: crate::app::DurationDist::Fixed(5 * MS) };
        cfg.relay_policy = ForwardPolicy::StoreAndForward;
        let stalled = run_pipeline(&cfg).unwrap();
        cfg.stall = crate::relay::StallModel::off();
        let plain = run_pipeline(&cfg).unwrap();
        for (a, b) in plain.records[0].iter().zip(&stalled.records[0]) {
            assert_eq!(b.server_dist.unwrap(), a.server_dist.unwrap() + 5 * MS);
        }
    }

    #[test]
    fn faster_pacing_never_raises_frame_rx() {
        let mut prev = f64::INFINITY;
        for rate in [500_000_000u64, 1_000_000_000, 2_000_000_000, 4_000_000_000] {
            let mut cfg = small(9);
            cfg.hop2.pacing_bps = rate;
            let rx = run_pipeline(&cfg).unwrap().summary.mean_ms("frame_rx").unwrap();
            assert!(rx <= prev, "{rate}: {rx} > {prev}");
            prev = rx;
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = ScenarioConfig { duration_s: 0.0, ..Default::default() };
        assert!(matches!(run_pipeline(&cfg), Err(SimError::Config(_))));
    }

    #[test]
    fn outputs_are_written() {
        let mut cfg = small(10);
        cfg.trace = true;
        cfg.receivers = 2;
        let report = run_scenario(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_outputs(dir.path(), &report).unwrap();
        let names: Vec<_> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
        assert_eq!(names, ["frames.csv", "hops.csv", "summary.csv", "frames_rx1.csv", "hops_rx1.csv", "trace.csv"]);
        let mut text = Vec::new();
        render_report(&report, &mut text).unwrap();
        assert!(String::from_utf8(text).unwrap().contains("service_l"));
    }
}
