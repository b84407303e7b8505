//! Scenario configuration: a flat `key = value` text format with section
//! prefixes, environment overrides, validation and the canned scenarios.
//!
//! ```text
//! # comments start with '#'
//! seed = 7
//! hop1.pacing_bps = 2000000000
//! capture.app_tx = 7.3ms
//! render.app_rx = 20ms..24ms
//! ```

use std::fmt;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::str::FromStr;

use crate::app::{CaptureProfile, DurationDist, RenderProfile};
use crate::frame::{MAX_PACKET_PAYLOAD, MBYTE};
use crate::netem::{LinkModel, NodeStageModel};
use crate::relay::{ForwardPolicy, RelayConfig, StallModel};
use crate::time::{format_duration, parse_duration, MS, SEC, US};
use crate::transport::{ReceiverConfig, SenderConfig};

/// Prefix of environment variables that override config keys:
/// `hop1.pacing_bps` is overridden by `VLAB_HOP1_PACING_BPS`.
pub const ENV_PREFIX: &str = "VLAB_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Sim,
    Socket,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Experiment {
    /// Sender → relay → receivers frame pipeline.
    #[default]
    Pipeline,
    /// Isolated probe packets over each hop.
    Probe,
    /// The pipeline repeated at several link rates.
    Sweep,
}

macro_rules! text_enum {
    ($t:ty { $($v:ident => $s:literal),* }) => {
        impl FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($s => Ok(<$t>::$v),)*
                    _ => Err(format!("must be one of: {}", [$($s),*].join(", "))),
                }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(<$t>::$v => $s,)* })
            }
        }
    };
}

text_enum!(Mode { Sim => "sim", Socket => "socket" });
text_enum!(Experiment { Pipeline => "pipeline", Probe => "probe", Sweep => "sweep" });

#[derive(Debug, Clone, PartialEq)]
pub struct HopConfig {
    pub pacing_bps: u64,
    pub link: LinkModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClockConfig {
    /// True offsets (`local lag behind master`), injected in simulation.
    pub sender_offset: i64,
    pub relay_offset: i64,
    /// Offset of every receiver except the first, which is the master.
    pub receiver_offset: i64,
    pub sender_drift_ppm: f64,
    pub relay_drift_ppm: f64,
    /// One-way delay of the sync path, slave to master.
    pub sync_delay: u64,
    /// One-way delay master to slave.
    pub sync_reverse_delay: u64,
    pub sync_interval: u64,
    pub sync_loss_rate: f64,
    pub sync_retries: u32,
}

impl Default for ClockConfig {
    fn default() -> Self {
        Self {
            sender_offset: 0,
            relay_offset: 0,
            receiver_offset: 0,
            sender_drift_ppm: 0.0,
            relay_drift_ppm: 0.0,
            sync_delay: 50 * US,
            sync_reverse_delay: 50 * US,
            sync_interval: SEC,
            sync_loss_rate: 0.0,
            sync_retries: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SocketConfig {
    pub sender_addr: String,
    pub relay_addr: String,
    pub receiver_addrs: Vec<String>,
    pub busy_work: bool,
    /// A role gives up after this long without traffic.
    pub idle_timeout: u64,
}

impl Default for SocketConfig {
    fn default() -> Self {
        Self {
            sender_addr: "127.0.0.1:47001".into(),
            relay_addr: "127.0.0.1:47002".into(),
            receiver_addrs: vec!["127.0.0.1:47003".into()],
            busy_work: false,
            idle_timeout: 3 * SEC,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub mode: Mode,
    pub experiment: Experiment,
    pub seed: u64,
    pub duration_s: f64,
    pub out_dir: PathBuf,
    pub receivers: usize,
    /// Keep (and write) the per-packet event trace.
    pub trace: bool,
    /// Simulated time allowed after the last capture for stragglers.
    pub drain: u64,

    pub capture: CaptureProfile,
    pub render: RenderProfile,

    pub segment_payload_size: usize,
    pub packet_payload_size: usize,
    pub overhead_bits: u64,
    pub nack_delay: u64,
    pub tail_timeout: u64,
    pub max_nack_rounds: u32,
    /// `None` waits forever for a frame.
    pub deadline: Option<u64>,
    pub retention_window: usize,

    pub hop1: HopConfig,
    pub hop2: HopConfig,
    pub sender_stages: NodeStageModel,
    pub relay_stages: NodeStageModel,
    pub receiver_stages: NodeStageModel,

    pub relay_policy: ForwardPolicy,
    pub relay_processing_delay: u64,
    pub relay_high_water: usize,
    pub stall: StallModel,

    pub clock: ClockConfig,

    pub probe_sizes: Vec<usize>,
    pub probe_samples: usize,
    pub sweep_bandwidths: Vec<u64>,

    pub socket: SocketConfig,
}

impl Default for ScenarioConfig {
    /// The `paper-default` scenario.
    fn default() -> Self {
        Self {
            name: "paper-default".into(),
            mode: Mode::Sim,
            experiment: Experiment::Pipeline,
            seed: 1,
            duration_s: 10.0,
            out_dir: PathBuf::from("out"),
            receivers: 1,
            trace: false,
            drain: 5 * SEC,
            capture: CaptureProfile::default(),
            render: RenderProfile::default(),
            segment_payload_size: 65_000,
            packet_payload_size: 1_400,
            // 32-byte protocol header plus UDP (8), IPv4 (20) and Ethernet (14) framing
            overhead_bits: 592,
            nack_delay: 2 * MS,
            tail_timeout: 5 * MS,
            max_nack_rounds: 3,
            deadline: Some(66_600_000),
            retention_window: 8,
            hop1: HopConfig {
                pacing_bps: 2_000_000_000,
                link: LinkModel { distance_km: 0.01, hops: 1, ..LinkModel::default() },
            },
            hop2: HopConfig {
                pacing_bps: 1_500_000_000,
                link: LinkModel { distance_km: 1.0, hops: 2, ..LinkModel::default() },
            },
            sender_stages: NodeStageModel::default(),
            relay_stages: NodeStageModel::default(),
            receiver_stages: NodeStageModel::default(),
            relay_policy: ForwardPolicy::CutThrough,
            relay_processing_delay: 600 * US,
            relay_high_water: 16_384,
            stall: StallModel::off(),
            clock: ClockConfig::default(),
            probe_sizes: vec![128, 512, 1_024],
            probe_samples: 300,
            sweep_bandwidths: vec![1_000_000_000, 2_000_000_000, 5_000_000_000, 10_000_000_000],
            socket: SocketConfig::default(),
        }
    }
}

/// A problem with one config key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub key: String,
    pub value: String,
    pub constraint: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {:?}: {}", self.key, self.value, self.constraint)
    }
}

fn diag(key: &str, value: impl ToString, constraint: impl Into<String>) -> Diagnostic {
    Diagnostic { key: key.to_string(), value: value.to_string(), constraint: constraint.into() }
}

pub const SCENARIOS: [&str; 4] = ["paper-default", "paper-protocol", "paper-probe", "bandwidth-sweep"];

const TOP_KEYS: [&str; 9] =
    ["name", "mode", "experiment", "seed", "duration_s", "out_dir", "receivers", "trace", "sim.drain"];
const SECTION_KEYS: [&str; 15] = [
    "capture.fps",
    "capture.app_tx",
    "capture.color_bytes",
    "capture.depth_bytes",
    "capture.audio_bytes",
    "render.app_rx",
    "frame.segment_payload",
    "frame.packet_payload",
    "transport.overhead_bits",
    "transport.nack_delay",
    "transport.tail_timeout",
    "transport.max_nack_rounds",
    "transport.deadline",
    "transport.retention_window",
    "relay.policy",
];
const HOP_FIELDS: [&str; 10] = [
    "pacing_bps",
    "bandwidth_bps",
    "distance_km",
    "propagation_per_km",
    "hops",
    "switching_min",
    "switching_max",
    "loss_rate",
    "reorder_rate",
    "reorder_delay",
];
const NODE_FIELDS: [&str; 5] = ["tx_sw", "tx_hw", "rx_sw", "rx_hw", "rx_load_factor"];
const TAIL_KEYS: [&str; 22] = [
    "relay.processing_delay",
    "relay.high_water",
    "relay.stall_probability",
    "relay.stall_duration",
    "clock.sender_offset",
    "clock.relay_offset",
    "clock.receiver_offset",
    "clock.sender_drift_ppm",
    "clock.relay_drift_ppm",
    "clock.sync_delay",
    "clock.sync_reverse_delay",
    "clock.sync_interval",
    "clock.sync_loss_rate",
    "clock.sync_retries",
    "probe.sizes",
    "probe.samples",
    "sweep.bandwidths",
    "socket.sender_addr",
    "socket.relay_addr",
    "socket.receiver_addrs",
    "socket.busy_work",
    "socket.idle_timeout",
];

/// Every accepted key, in canonical output order.
pub fn keys() -> Vec<String> {
    let mut out: Vec<String> = TOP_KEYS.iter().chain(&SECTION_KEYS).map(|k| k.to_string()).collect();
    for hop in ["hop1", "hop2"] {
        out.extend(HOP_FIELDS.iter().map(|f| format!("{hop}.{f}")));
    }
    for node in ["sender", "relay", "receiver"] {
        out.extend(NODE_FIELDS.iter().map(|f| format!("{node}.{f}")));
    }
    out.extend(TAIL_KEYS.iter().map(|k| k.to_string()));
    out
}

/// Environment variable name for a key.
pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.replace('.', "_").to_ascii_uppercase())
}

fn num<T: FromStr>(v: &str) -> Result<T, String> {
    v.trim().replace('_', "").parse().map_err(|_| "not a valid number".to_string())
}

fn float(v: &str) -> Result<f64, String> {
    let x: f64 = num(v)?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err("not a finite number".into())
    }
}

fn dur(v: &str) -> Result<u64, String> {
    parse_duration(v).map_err(|e| e.to_string())
}

fn signed_dur(v: &str) -> Result<i64, String> {
    let v = v.trim();
    match v.strip_prefix('-') {
        Some(rest) => Ok(-(dur(rest)? as i64)),
        None => Ok(dur(v.strip_prefix('+').unwrap_or(v))? as i64),
    }
}

fn fmt_signed(v: i64) -> String {
    if v < 0 {
        format!("-{}", format_duration(v.unsigned_abs()))
    } else {
        format_duration(v as u64)
    }
}

fn boolean(v: &str) -> Result<bool, String> {
    match v.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err("expected true or false".into()),
    }
}

fn list<T: FromStr>(v: &str) -> Result<Vec<T>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(num).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn dist(v: &str) -> Result<DurationDist, String> {
    v.trim().parse().map_err(|e: crate::time::DurationParseError| e.to_string())
}

impl ScenarioConfig {
    /// A canned scenario by name.
    pub fn scenario(name: &str) -> Option<Self> {
        let base = Self::default();
        match name {
            "paper-default" => Some(base),
            "paper-protocol" => Some(Self { name: name.into(), ..base }),
            "paper-probe" => Some(Self { name: name.into(), experiment: Experiment::Probe, ..base }),
            "bandwidth-sweep" => {
                let ideal = |pacing_bps| HopConfig { pacing_bps, link: LinkModel::ideal(pacing_bps) };
                Some(Self {
                    name: name.into(),
                    experiment: Experiment::Sweep,
                    duration_s: 1.0,
                    overhead_bits: 0,
                    relay_processing_delay: 0,
                    hop1: ideal(10_000_000_000),
                    hop2: ideal(10_000_000_000),
                    sender_stages: NodeStageModel::zero(),
                    relay_stages: NodeStageModel::zero(),
                    receiver_stages: NodeStageModel::zero(),
                    ..base
                })
            }
            _ => None,
        }
    }

    fn hop_mut(&mut self, hop: &str) -> Option<&mut HopConfig> {
        match hop {
            "hop1" => Some(&mut self.hop1),
            "hop2" => Some(&mut self.hop2),
            _ => None,
        }
    }

    fn hop(&self, hop: &str) -> Option<&HopConfig> {
        match hop {
            "hop1" => Some(&self.hop1),
            "hop2" => Some(&self.hop2),
            _ => None,
        }
    }

    fn node_mut(&mut self, node: &str) -> Option<&mut NodeStageModel> {
        match node {
            "sender" => Some(&mut self.sender_stages),
            "relay" => Some(&mut self.relay_stages),
            "receiver" => Some(&mut self.receiver_stages),
            _ => None,
        }
    }

    fn node(&self, node: &str) -> Option<&NodeStageModel> {
        match node {
            "sender" => Some(&self.sender_stages),
            "relay" => Some(&self.relay_stages),
            "receiver" => Some(&self.receiver_stages),
            _ => None,
        }
    }

    /// Sets one key from its text form. Range checks are left to
    /// [`validate`](Self::validate); only the syntax is checked here.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), Diagnostic> {
        let v = value.trim();
        let r: Result<(), String> = (|| {
            match key {
                "name" => self.name = v.to_string(),
                "mode" => self.mode = v.parse()?,
                "experiment" => self.experiment = v.parse()?,
                "seed" => self.seed = num(v)?,
                "duration_s" => self.duration_s = float(v)?,
                "out_dir" => self.out_dir = PathBuf::from(v),
                "receivers" => self.receivers = num(v)?,
                "trace" => self.trace = boolean(v)?,
                "sim.drain" => self.drain = dur(v)?,
                "capture.fps" => self.capture.fps = float(v)?,
                "capture.app_tx" => self.capture.app_tx = dist(v)?,
                "capture.color_bytes" => self.capture.color_bytes = num(v)?,
                "capture.depth_bytes" => self.capture.depth_bytes = num(v)?,
                "capture.audio_bytes" => self.capture.audio_bytes = num(v)?,
                "render.app_rx" => self.render.app_rx = dist(v)?,
                "frame.segment_payload" => self.segment_payload_size = num(v)?,
                "frame.packet_payload" => self.packet_payload_size = num(v)?,
                "transport.overhead_bits" => self.overhead_bits = num(v)?,
                "transport.nack_delay" => self.nack_delay = dur(v)?,
                "transport.tail_timeout" => self.tail_timeout = dur(v)?,
                "transport.max_nack_rounds" => self.max_nack_rounds = num(v)?,
                "transport.deadline" => {
                    self.deadline = if v == "none" { None } else { Some(dur(v)?) };
                }
                "transport.retention_window" => self.retention_window = num(v)?,
                "relay.policy" => self.relay_policy = v.parse()?,
                "relay.processing_delay" => self.relay_processing_delay = dur(v)?,
                "relay.high_water" => self.relay_high_water = num(v)?,
                "relay.stall_probability" => self.stall.probability = float(v)?,
                "relay.stall_duration" => self.stall.duration = dist(v)?,
                "clock.sender_offset" => self.clock.sender_offset = signed_dur(v)?,
                "clock.relay_offset" => self.clock.relay_offset = signed_dur(v)?,
                "clock.receiver_offset" => self.clock.receiver_offset = signed_dur(v)?,
                "clock.sender_drift_ppm" => self.clock.sender_drift_ppm = float(v)?,
                "clock.relay_drift_ppm" => self.clock.relay_drift_ppm = float(v)?,
                "clock.sync_delay" => self.clock.sync_delay = dur(v)?,
                "clock.sync_reverse_delay" => self.clock.sync_reverse_delay = dur(v)?,
                "clock.sync_interval" => self.clock.sync_interval = dur(v)?,
                "clock.sync_loss_rate" => self.clock.sync_loss_rate = float(v)?,
                "clock.sync_retries" => self.clock.sync_retries = num(v)?,
                "probe.sizes" => self.probe_sizes = list(v)?,
                "probe.samples" => self.probe_samples = num(v)?,
                "sweep.bandwidths" => self.sweep_bandwidths = list(v)?,
                "socket.sender_addr" => self.socket.sender_addr = v.to_string(),
                "socket.relay_addr" => self.socket.relay_addr = v.to_string(),
                "socket.receiver_addrs" => {
                    self.socket.receiver_addrs =
                        v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
                }
                "socket.busy_work" => self.socket.busy_work = boolean(v)?,
                "socket.idle_timeout" => self.socket.idle_timeout = dur(v)?,
                _ => {
                    let (section, field) = key.split_once('.').ok_or("unknown key")?;
                    if let Some(hop) = self.hop_mut(section) {
                        let l = &mut hop.link;
                        match field {
                            "pacing_bps" => hop.pacing_bps = num(v)?,
                            "bandwidth_bps" => l.bandwidth_bps = num(v)?,
                            "distance_km" => l.distance_km = float(v)?,
                            "propagation_per_km" => l.propagation_per_km = dur(v)?,
                            "hops" => l.hops = num(v)?,
                            "switching_min" => l.switching_min = dur(v)?,
                            "switching_max" => l.switching_max = dur(v)?,
                            "loss_rate" => l.loss_rate = float(v)?,
                            "reorder_rate" => l.reorder_rate = float(v)?,
                            "reorder_delay" => l.reorder_delay = dur(v)?,
                            _ => return Err("unknown key".into()),
                        }
                    } else if let Some(node) = self.node_mut(section) {
                        match field {
                            "tx_sw" => node.tx_sw = dur(v)?,
                            "tx_hw" => node.tx_hw = dur(v)?,
                            "rx_sw" => node.rx_sw = dur(v)?,
                            "rx_hw" => node.rx_hw = dur(v)?,
                            "rx_load_factor" => node.rx_load_factor = float(v)?,
                            _ => return Err("unknown key".into()),
                        }
                    } else {
                        return Err("unknown key".into());
                    }
                }
            }
            Ok(())
        })();
        r.map_err(|c| diag(key, value, c))
    }

    /// Text form of one key's value.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "name" => self.name.clone(),
            "mode" => self.mode.to_string(),
            "experiment" => self.experiment.to_string(),
            "seed" => self.seed.to_string(),
            "duration_s" => self.duration_s.to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            "receivers" => self.receivers.to_string(),
            "trace" => self.trace.to_string(),
            "sim.drain" => format_duration(self.drain),
            "capture.fps" => self.capture.fps.to_string(),
            "capture.app_tx" => self.capture.app_tx.to_string(),
            "capture.color_bytes" => self.capture.color_bytes.to_string(),
            "capture.depth_bytes" => self.capture.depth_bytes.to_string(),
            "capture.audio_bytes" => self.capture.audio_bytes.to_string(),
            "render.app_rx" => self.render.app_rx.to_string(),
            "frame.segment_payload" => self.segment_payload_size.to_string(),
            "frame.packet_payload" => self.packet_payload_size.to_string(),
            "transport.overhead_bits" => self.overhead_bits.to_string(),
            "transport.nack_delay" => format_duration(self.nack_delay),
            "transport.tail_timeout" => format_duration(self.tail_timeout),
            "transport.max_nack_rounds" => self.max_nack_rounds.to_string(),
            "transport.deadline" => self.deadline.map_or("none".into(), format_duration),
            "transport.retention_window" => self.retention_window.to_string(),
            "relay.policy" => self.relay_policy.to_string(),
            "relay.processing_delay" => format_duration(self.relay_processing_delay),
            "relay.high_water" => self.relay_high_water.to_string(),
            "relay.stall_probability" => self.stall.probability.to_string(),
            "relay.stall_duration" => self.stall.duration.to_string(),
            "clock.sender_offset" => fmt_signed(self.clock.sender_offset),
            "clock.relay_offset" => fmt_signed(self.clock.relay_offset),
            "clock.receiver_offset" => fmt_signed(self.clock.receiver_offset),
            "clock.sender_drift_ppm" => self.clock.sender_drift_ppm.to_string(),
            "clock.relay_drift_ppm" => self.clock.relay_drift_ppm.to_string(),
            "clock.sync_delay" => format_duration(self.clock.sync_delay),
            "clock.sync_reverse_delay" => format_duration(self.clock.sync_reverse_delay),
            "clock.sync_interval" => format_duration(self.clock.sync_interval),
            "clock.sync_loss_rate" => self.clock.sync_loss_rate.to_string(),
            "clock.sync_retries" => self.clock.sync_retries.to_string(),
            "probe.sizes" => join(&self.probe_sizes),
            "probe.samples" => self.probe_samples.to_string(),
            "sweep.bandwidths" => join(&self.sweep_bandwidths),
            "socket.sender_addr" => self.socket.sender_addr.clone(),
            "socket.relay_addr" => self.socket.relay_addr.clone(),
            "socket.receiver_addrs" => self.socket.receiver_addrs.join(","),
            "socket.busy_work" => self.socket.busy_work.to_string(),
            "socket.idle_timeout" => format_duration(self.socket.idle_timeout),
            _ => {
                let (section, field) = key.split_once('.')?;
                if let Some(hop) = self.hop(section) {
                    let l = &hop.link;
                    match field {
                        "pacing_bps" => hop.pacing_bps.to_string(),
                        "bandwidth_bps" => l.bandwidth_bps.to_string(),
                        "distance_km" => l.distance_km.to_string(),
                        "propagation_per_km" => format_duration(l.propagation_per_km),
                        "hops" => l.hops.to_string(),
                        "switching_min" => format_duration(l.switching_min),
                        "switching_max" => format_duration(l.switching_max),
                        "loss_rate" => l.loss_rate.to_string(),
                        "reorder_rate" => l.reorder_rate.to_string(),
                        "reorder_delay" => format_duration(l.reorder_delay),
                        _ => return None,
                    }
                } else {
                    let node = self.node(section)?;
                    match field {
                        "tx_sw" => format_duration(node.tx_sw),
                        "tx_hw" => format_duration(node.tx_hw),
                        "rx_sw" => format_duration(node.rx_sw),
                        "rx_hw" => format_duration(node.rx_hw),
                        "rx_load_factor" => node.rx_load_factor.to_string(),
                        _ => return None,
                    }
                }
            }
        })
    }

    /// Applies `key = value` lines on top of `self`. Syntax errors and
    /// unknown keys are all reported, not just the first.
    pub fn apply_text(&mut self, text: &str) -> Result<(), Vec<Diagnostic>> {
        let mut errors = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                errors.push(diag(&format!("line {}", n + 1), line, "expected key = value"));
                continue;
            };
            if let Err(d) = self.set(k.trim(), v) {
                errors.push(d);
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    /// Parses a config file over the defaults.
    pub fn parse(text: &str) -> Result<Self, Vec<Diagnostic>> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies `VLAB_*` overrides. Unknown `VLAB_*` names are rejected like
    /// unknown keys.
    pub fn apply_env<I>(&mut self, vars: I) -> Result<(), Vec<Diagnostic>>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let keys = keys();
        let mut errors = Vec::new();
        let mut vars: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        vars.sort();
        for (var, value) in vars {
            match keys.iter().find(|k| env_name(k) == var) {
                Some(k) => {
                    if let Err(d) = self.set(k, &value) {
                        errors.push(d);
                    }
                }
                None => errors.push(diag(&var, &value, "unknown key")),
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        keys().iter().map(|k| format!("{k} = {}\n", self.get(k).unwrap())).collect()
    }

    /// Frames the pipeline will capture.
    pub fn frame_count(&self) -> u64 {
        self.capture.frames_in(self.duration_s)
    }

    /// Empty iff the scenario can run.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut d = Vec::new();
        let mut check = |ok: bool, key: &str, constraint: &str| {
            if !ok {
                d.push(diag(key, self.get(key).unwrap_or_default(), constraint));
            }
        };
        check(self.duration_s > 0.0, "duration_s", "duration_s must be > 0");
        check(self.capture.fps > 0.0, "capture.fps", "fps must be > 0");
        check(
            self.experiment != Experiment::Pipeline || self.capture.fps <= 0.0 || self.frame_count() >= 1,
            "duration_s",
            "duration must cover at least one frame",
        );
        check(self.receivers >= 1, "receivers", "at least one receiver is required");
        check(self.receivers <= 64, "receivers", "at most 64 receivers are supported");
        check(self.drain > 0, "sim.drain", "drain must be > 0");
        check(self.capture.app_tx.is_valid(), "capture.app_tx", "range minimum must not exceed maximum");
        check(self.render.app_rx.is_valid(), "render.app_rx", "range minimum must not exceed maximum");
        let frame_bytes = self.capture.frame_bytes();
        check(frame_bytes > 0, "capture.color_bytes", "a frame must contain at least one byte");
        check(frame_bytes <= 64 * MBYTE, "capture.color_bytes", "frame exceeds 64 MB");
        check(self.segment_payload_size > 0, "frame.segment_payload", "segment payload must be > 0");
        check(
            (1..=MAX_PACKET_PAYLOAD).contains(&self.packet_payload_size),
            "frame.packet_payload",
            "packet payload must be in [1, 65475]",
        );
        if self.segment_payload_size > 0 && self.packet_payload_size > 0 {
            check(
                self.segment_payload_size.div_ceil(self.packet_payload_size) <= u16::MAX as usize,
                "frame.packet_payload",
                "a segment must fit in 65535 packets",
            );
            check(
                frame_bytes.div_ceil(self.segment_payload_size) <= u16::MAX as usize,
                "frame.segment_payload",
                "a frame must fit in 65535 segments",
            );
        }
        check(self.nack_delay > 0, "transport.nack_delay", "nack_delay must be > 0");
        check(self.tail_timeout > 0, "transport.tail_timeout", "tail_timeout must be > 0");
        check(self.deadline != Some(0), "transport.deadline", "deadline must be > 0 or none");
        check(self.retention_window >= 1, "transport.retention_window", "retention window must be >= 1");
        check(self.relay_high_water >= 1, "relay.high_water", "high-water mark must be >= 1");
        check(
            (0.0..=1.0).contains(&self.stall.probability),
            "relay.stall_probability",
            "stall_probability must be in [0,1]",
        );
        check(self.stall.duration.is_valid(), "relay.stall_duration", "range minimum must not exceed maximum");
        check(self.clock.sync_interval > 0, "clock.sync_interval", "sync interval must be > 0");
        check(
            (0.0..1.0).contains(&self.clock.sync_loss_rate),
            "clock.sync_loss_rate",
            "sync_loss_rate must be in [0,1)",
        );
        for (key, ppm) in [
            ("clock.sender_drift_ppm", self.clock.sender_drift_ppm),
            ("clock.relay_drift_ppm", self.clock.relay_drift_ppm),
        ] {
            check(ppm.abs() < 1_000.0, key, "drift must be within +-1000 ppm");
        }
        for (name, hop) in [("hop1", &self.hop1), ("hop2", &self.hop2)] {
            let key = format!("{name}.pacing_bps");
            check(hop.pacing_bps > 0, &key, &format!("pacing rate of {name} must be > 0"));
            for v in hop.link.check() {
                check(false, &format!("{name}.{}", v.field), v.constraint);
            }
        }
        for name in ["sender", "relay", "receiver"] {
            for v in self.node(name).unwrap().check() {
                check(false, &format!("{name}.{}", v.field), v.constraint);
            }
        }
        if self.experiment == Experiment::Probe {
            check(!self.probe_sizes.is_empty(), "probe.sizes", "at least one probe size is required");
            check(self.probe_sizes.iter().all(|&s| s > 0), "probe.sizes", "probe sizes must be > 0");
            check(self.probe_samples >= 1, "probe.samples", "at least one sample per size is required");
        }
        if self.experiment == Experiment::Sweep {
            check(!self.sweep_bandwidths.is_empty(), "sweep.bandwidths", "at least one bandwidth is required");
            check(self.sweep_bandwidths.iter().all(|&b| b > 0), "sweep.bandwidths", "bandwidths must be > 0");
        }
        if self.mode == Mode::Socket {
            for key in ["socket.sender_addr", "socket.relay_addr"] {
                let v = self.get(key).unwrap();
                check(v.parse::<SocketAddr>().is_ok(), key, "expected host:port");
            }
            check(
                self.socket.receiver_addrs.iter().all(|a| a.parse::<SocketAddr>().is_ok()),
                "socket.receiver_addrs",
                "expected a comma-separated list of host:port",
            );
            check(
                self.socket.receiver_addrs.len() == self.receivers,
                "socket.receiver_addrs",
                "one address per receiver is required",
            );
            check(self.experiment == Experiment::Pipeline, "experiment", "socket mode runs the pipeline only");
        }
        d
    }

    /// Sender-side transport config for a hop.
    pub fn sender_config(&self, hop: &HopConfig, stream_id: u8) -> SenderConfig {
        SenderConfig {
            stream_id,
            pacing_rate_bps: hop.pacing_bps,
            segment_payload_size: self.segment_payload_size,
            packet_payload_size: self.packet_payload_size,
            overhead_bits: self.overhead_bits,
            retention_window: self.retention_window,
            max_frame_bytes: 64 * MBYTE,
        }
    }

    pub fn receiver_config(&self) -> ReceiverConfig {
        ReceiverConfig {
            stream_id: None,
            nack_delay: self.nack_delay,
            tail_timeout: self.tail_timeout,
            max_nack_rounds: self.max_nack_rounds,
            deadline: self.deadline,
            emit_segments: false,
        }
    }

    pub fn relay_config(&self) -> RelayConfig {
        RelayConfig {
            policy: self.relay_policy,
            processing_delay: self.relay_processing_delay,
            high_water: self.relay_high_water,
            upstream: self.receiver_config(),
            downstream: (0..self.receivers).map(|_| self.sender_config(&self.hop2, 0)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        assert_eq!(ScenarioConfig::default().validate(), vec![]);
        for name in SCENARIOS {
            let cfg = ScenarioConfig::scenario(name).unwrap();
            assert_eq!(cfg.validate(), vec![], "{name}");
            assert_eq!(cfg.name, name);
        }
        assert!(ScenarioConfig::scenario("nope").is_none());
    }

    #[test]
    fn text_round_trip() {
        for name in SCENARIOS {
            let cfg = ScenarioConfig::scenario(name).unwrap();
            assert_eq!(ScenarioConfig::parse(&cfg.to_text()).unwrap(), cfg, "{name}");
        }
        let mut odd = ScenarioConfig::default();
        odd.clock.sender_offset = -3_000_123;
        odd.deadline = None;
        odd.render.app_rx = DurationDist::Uniform { min: 20 * MS, max: 24 * MS };
        assert_eq!(ScenarioConfig::parse(&odd.to_text()).unwrap(), odd);
    }

    #[test]
    fn parses_sections_and_comments() {
        let cfg = ScenarioConfig::parse(
            "# a comment\nhop1.bandwidth_bps=2000000000\n  seed = 9  # trailing\n\nrender.app_rx = 20ms..24ms\nclock.sender_offset = +3ms\n",
        )
        .unwrap();
        assert_eq!(cfg.hop1.link.bandwidth_bps, 2_000_000_000);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.clock.sender_offset, 3 * MS as i64);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ScenarioConfig::parse("hop3.pacing_bps = 1\nfoo = 2\nseed = x\nnot a pair\n").unwrap_err();
        let keys: Vec<_> = err.iter().map(|d| d.key.as_str()).collect();
        assert_eq!(keys, ["hop3.pacing_bps", "foo", "seed", "line 4"]);
        assert_eq!(err[0].constraint, "unknown key");
    }

    #[test]
    fn loss_rate_out_of_range() {
        let cfg = ScenarioConfig::parse("hop2.loss_rate = 1.5").unwrap();
        let d = cfg.validate();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].key, "hop2.loss_rate");
        assert_eq!(d[0].value, "1.5");
        assert_eq!(d[0].constraint, "loss_rate must be in [0,1]");
    }

    #[test]
    fn zero_pacing_names_the_hop() {
        let cfg = ScenarioConfig::parse("hop1.pacing_bps = 0").unwrap();
        let d = cfg.validate();
        assert_eq!(d.len(), 1);
        assert!(d[0].constraint.contains("hop1"));
    }

    #[test]
    fn zero_duration_is_invalid() {
        let cfg = ScenarioConfig::parse("duration_s = 0").unwrap();
        assert!(cfg.validate().iter().any(|d| d.key == "duration_s"));
    }

    #[test]
    fn env_overrides() {
        let mut cfg = ScenarioConfig::default();
        cfg.apply_env([
            ("VLAB_HOP1_PACING_BPS".to_string(), "1000000000".to_string()),
            ("PATH".to_string(), "/bin".to_string()),
            ("VLAB_CAPTURE_APP_TX".to_string(), "5ms".to_string()),
        ])
        .unwrap();
        assert_eq!(cfg.hop1.pacing_bps, 1_000_000_000);
        assert_eq!(cfg.capture.app_tx, DurationDist::Fixed(5 * MS));
        let err = cfg.apply_env([("VLAB_NOPE".to_string(), "1".to_string())]).unwrap_err();
        assert_eq!(err[0].key, "VLAB_NOPE");
    }

    #[test]
    fn every_key_has_a_value() {
        let cfg = ScenarioConfig::default();
        for k in keys() {
            let v = cfg.get(&k).unwrap_or_else(|| panic!("{k}"));
            let mut copy = cfg.clone();
            copy.set(&k, &v).unwrap();
            assert_eq!(copy, cfg, "{k}");
        }
    }

    #[test]
    fn socket_mode_checks_addresses() {
        let mut cfg = ScenarioConfig { mode: Mode::Socket, ..Default::default() };
        assert_eq!(cfg.validate(), vec![]);
        cfg.socket.relay_addr = "nowhere".into();
        cfg.receivers = 2;
        let keys: Vec<_> = cfg.validate().into_iter().map(|d| d.key).collect();
        assert_eq!(keys, ["socket.relay_addr", "socket.receiver_addrs"]);
    }
}
