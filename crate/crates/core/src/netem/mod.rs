//! Deterministic network emulation.
//!
//! A packet crossing one hop accumulates, in order:
//!
//! `tx_sw → tx_hw → queue → serialization → propagation → switching → rx_hw → rx_sw`
//!
//! where serialization runs at the link bandwidth through a single FIFO, the
//! propagation term is `distance_km × propagation_per_km`, and every switch on
//! the path adds a delay drawn uniformly from `[switching_min, switching_max]`.

mod event;
mod probe;

pub use event::EventQueue;
pub use probe::{run_probe_experiment, ProbeSegment, SizeStats, StageStats, STAGE_NAMES};

use rand::Rng;

use crate::rng::{self, StreamRng};
use crate::time::{serialization_ns, SEC, US};

pub const DEFAULT_PROPAGATION_PER_KM: u64 = 5 * US;
pub const DEFAULT_SWITCHING_MIN: u64 = 5 * US;
pub const DEFAULT_SWITCHING_MAX: u64 = 10 * US;

/// Constraint violated by a model parameter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub constraint: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkModel {
    pub bandwidth_bps: u64,
    pub distance_km: f64,
    pub propagation_per_km: u64,
    /// Switches traversed.
    pub hops: u32,
    pub switching_min: u64,
    pub switching_max: u64,
    pub loss_rate: f64,
    pub reorder_rate: f64,
    /// Extra delay applied to a packet picked for reordering.
    pub reorder_delay: u64,
}

impl Default for LinkModel {
    fn default() -> Self {
        Self {
            bandwidth_bps: 10_000_000_000,
            distance_km: 0.0,
            propagation_per_km: DEFAULT_PROPAGATION_PER_KM,
            hops: 1,
            switching_min: DEFAULT_SWITCHING_MIN,
            switching_max: DEFAULT_SWITCHING_MAX,
            loss_rate: 0.0,
            reorder_rate: 0.0,
            reorder_delay: 0,
        }
    }
}

impl LinkModel {
    /// A lossless link with only a serialization term.
    pub fn ideal(bandwidth_bps: u64) -> Self {
        Self { hops: 0, switching_min: 0, switching_max: 0, ..Self::default() }.with_bandwidth(bandwidth_bps)
    }

    pub fn with_bandwidth(mut self, bps: u64) -> Self {
        self.bandwidth_bps = bps;
        self
    }

    pub fn propagation_ns(&self) -> u64 {
        (self.distance_km * self.propagation_per_km as f64).round() as u64
    }

    pub fn check(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.bandwidth_bps == 0 {
            v.push(Violation { field: "bandwidth_bps", constraint: "bandwidth_bps must be > 0" });
        }
        if !(self.distance_km >= 0.0 && self.distance_km.is_finite()) {
            v.push(Violation { field: "distance_km", constraint: "distance_km must be >= 0" });
        }
        if self.switching_min > self.switching_max {
            v.push(Violation { field: "switching_min", constraint: "switching_min must be <= switching_max" });
        }
        if !(0.0..=1.0).contains(&self.loss_rate) {
            v.push(Violation { field: "loss_rate", constraint: "loss_rate must be in [0,1]" });
        }
        if !(0.0..=1.0).contains(&self.reorder_rate) {
            v.push(Violation { field: "reorder_rate", constraint: "reorder_rate must be in [0,1]" });
        }
        v
    }
}

/// Per-node kernel and NIC delays.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeStageModel {
    pub tx_sw: u64,
    pub tx_hw: u64,
    pub rx_sw: u64,
    pub rx_hw: u64,
    /// Multiplies both receive stages (CPU load).
    pub rx_load_factor: f64,
}

impl Default for NodeStageModel {
    fn default() -> Self {
        Self { tx_sw: 3 * US, tx_hw: US, rx_sw: 4 * US, rx_hw: 2 * US, rx_load_factor: 1.0 }
    }
}

impl NodeStageModel {
    pub fn zero() -> Self {
        Self { tx_sw: 0, tx_hw: 0, rx_sw: 0, rx_hw: 0, rx_load_factor: 1.0 }
    }

    pub fn effective_rx_sw(&self) -> u64 {
        (self.rx_sw as f64 * self.rx_load_factor).round() as u64
    }

    pub fn effective_rx_hw(&self) -> u64 {
        (self.rx_hw as f64 * self.rx_load_factor).round() as u64
    }

    pub fn check(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if !(self.rx_load_factor >= 0.0 && self.rx_load_factor.is_finite()) {
            v.push(Violation { field: "rx_load_factor", constraint: "rx_load_factor must be >= 0" });
        }
        v
    }
}

/// Per-stage delay of one packet over one hop, in nanoseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StageBreakdown {
    pub tx_sw: u64,
    pub tx_hw: u64,
    /// Waiting for the wire or for the FIFO ahead to drain.
    pub queue: u64,
    pub serialization: u64,
    pub propagation: u64,
    pub switching: u64,
    pub reorder: u64,
    pub rx_hw: u64,
    pub rx_sw: u64,
}

impl StageBreakdown {
    pub fn total(&self) -> u64 {
        self.as_array().iter().sum()
    }

    /// Stages in [`STAGE_NAMES`] order (without the total).
    pub fn as_array(&self) -> [u64; 9] {
        [
            self.tx_sw,
            self.tx_hw,
            self.queue,
            self.serialization,
            self.propagation,
            self.switching,
            self.reorder,
            self.rx_hw,
            self.rx_sw,
        ]
    }
}

/// Independent random streams for one direction of one link.
pub struct LinkRng {
    loss: StreamRng,
    switching: StreamRng,
    reorder: StreamRng,
}

impl LinkRng {
    pub fn new(seed: u64, link_index: u64) -> Self {
        Self {
            loss: rng::stream(seed, "loss", link_index),
            switching: rng::stream(seed, "switching", link_index),
            reorder: rng::stream(seed, "reorder", link_index),
        }
    }
}

/// Outcome of one packet's trip across a hop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketDelay {
    pub lost: bool,
    pub stages: StageBreakdown,
}

impl PacketDelay {
    pub fn total(&self) -> u64 {
        self.stages.total()
    }
}

/// Random draws for one packet, taken in a fixed order: loss, then one
/// switching sample per hop, then reordering.
fn draw(link: &LinkModel, rng: &mut LinkRng) -> (bool, u64, u64) {
    let lost = link.loss_rate > 0.0 && rng.loss.gen::<f64>() < link.loss_rate;
    let switching = (0..link.hops)
        .map(|_| {
            if link.switching_max == link.switching_min {
                link.switching_min
            } else {
                rng.switching.gen_range(link.switching_min..=link.switching_max)
            }
        })
        .sum();
    let reorder =
        if link.reorder_rate > 0.0 && rng.reorder.gen::<f64>() < link.reorder_rate { link.reorder_delay } else { 0 };
    (lost, switching, reorder)
}

/// Stage-by-stage delay of an isolated packet (no FIFO contention).
pub fn packet_delay(
    link: &LinkModel,
    node_tx: &NodeStageModel,
    node_rx: &NodeStageModel,
    packet_bytes: usize,
    rng: &mut LinkRng,
) -> PacketDelay {
    let (lost, switching, reorder) = draw(link, rng);
    PacketDelay {
        lost,
        stages: StageBreakdown {
            tx_sw: node_tx.tx_sw,
            tx_hw: node_tx.tx_hw,
            queue: 0,
            serialization: serialization_ns(packet_bytes as u64 * 8, link.bandwidth_bps),
            propagation: link.propagation_ns(),
            switching,
            reorder,
            rx_hw: node_rx.effective_rx_hw(),
            rx_sw: node_rx.effective_rx_sw(),
        },
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LinkStats {
    pub sent: u64,
    pub delivered: u64,
    pub lost: u64,
}

/// Result of handing a packet to a [`LinkState`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transit {
    pub lost: bool,
    /// Virtual time the packet is handed to the receiving application.
    pub deliver_at: u64,
    pub stages: StageBreakdown,
}

/// One direction of a hop with a single FIFO serialization queue.
pub struct LinkState {
    model: LinkModel,
    tx: NodeStageModel,
    rx: NodeStageModel,
    rng: LinkRng,
    /// Wire busy-until, in units of `1 / bandwidth_bps` ns (exact).
    wire_free: u128,
    /// Latest in-order arrival at the far side of the switches.
    last_arrival: u64,
    stats: LinkStats,
}

impl LinkState {
    pub fn new(model: LinkModel, tx: NodeStageModel, rx: NodeStageModel, rng: LinkRng) -> Self {
        Self { model, tx, rx, rng, wire_free: 0, last_arrival: 0, stats: LinkStats::default() }
    }

    pub fn model(&self) -> &LinkModel {
        &self.model
    }

    pub fn stats(&self) -> LinkStats {
        self.stats
    }

    /// Sends `wire_bits` at virtual time `now`. Lost packets still occupy the
    /// wire; they simply never arrive.
    pub fn transmit(&mut self, now: u64, wire_bits: u64) -> Transit {
        let bw = self.model.bandwidth_bps as u128;
        let (lost, switching, reorder) = draw(&self.model, &mut self.rng);
        self.stats.sent += 1;

        let at_nic = now + self.tx.tx_sw + self.tx.tx_hw;
        let start = (at_nic as u128 * bw).max(self.wire_free);
        let end = start + wire_bits as u128 * SEC as u128;
        self.wire_free = end;
        let start_ns = start.div_ceil(bw) as u64;
        let end_ns = end.div_ceil(bw) as u64;

        let mut queue = start_ns - at_nic;
        let mut arrival = end_ns + self.model.propagation_ns() + switching;
        if reorder == 0 {
            // switches do not overtake
            if arrival < self.last_arrival {
                queue += self.last_arrival - arrival;
                arrival = self.last_arrival;
            }
            if !lost {
                self.last_arrival = arrival;
            }
        }
        arrival += reorder;

        let stages = StageBreakdown {
            tx_sw: self.tx.tx_sw,
            tx_hw: self.tx.tx_hw,
            queue,
            serialization: end_ns - start_ns,
            propagation: self.model.propagation_ns(),
            switching,
            reorder,
            rx_hw: self.rx.effective_rx_hw(),
            rx_sw: self.rx.effective_rx_sw(),
        };
        if lost {
            self.stats.lost += 1;
        } else {
            self.stats.delivered += 1;
        }
        let deliver_at = now + stages.total();
        debug_assert_eq!(deliver_at, arrival + stages.rx_hw + stages.rx_sw);
        Transit { lost, deliver_at, stages }
    }
}

/// Bit rate needed to stream `frame_bytes` frames at `fps`.
pub fn required_bandwidth_bps(frame_bytes: u64, fps: f64) -> f64 {
    frame_bytes as f64 * 8.0 * fps
}

/// Time to push a whole frame through a link of `bandwidth_bps`.
pub fn frame_serialization_ns(frame_bytes: u64, bandwidth_bps: u64) -> u64 {
    serialization_ns(frame_bytes * 8, bandwidth_bps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::MS;

    #[test]
    fn bandwidth_identity() {
        let bps = required_bandwidth_bps(3_520_000, 30.0);
        assert!((bps - 844.8e6).abs() < 1e-3);
    }

    #[test]
    fn frame_as_one_unit_serialization() {
        let zero = NodeStageModel::zero();
        let mut rng = LinkRng::new(1, 0);
        let d = packet_delay(&LinkModel::ideal(1_000_000_000), &zero, &zero, 3_520_000, &mut rng);
        assert_eq!(d.total(), 28_160_000);
        let d = packet_delay(&LinkModel::ideal(10_000_000_000), &zero, &zero, 3_520_000, &mut rng);
        assert_eq!(d.total(), 2_816_000);
        assert_eq!(frame_serialization_ns(3_520_000, 1_000_000_000), 28 * MS + 160_000);
    }

    #[test]
    fn stage_sum_for_kilobyte_probe() {
        let link = LinkModel {
            bandwidth_bps: 10_000_000_000,
            distance_km: 1.0,
            hops: 2,
            switching_min: 7_500,
            switching_max: 7_500,
            ..LinkModel::default()
        };
        let tx = NodeStageModel { tx_sw: 2 * US, tx_hw: US, ..NodeStageModel::zero() };
        let rx = NodeStageModel { rx_sw: 3 * US, rx_hw: 2 * US, ..NodeStageModel::zero() };
        let d = packet_delay(&link, &tx, &rx, 1_024, &mut LinkRng::new(3, 0));
        // 819.2 ns on the wire, rounded up to whole nanoseconds
        assert_eq!(d.stages.serialization, 820);
        assert_eq!(d.stages.propagation, 5_000);
        assert_eq!(d.stages.switching, 15_000);
        assert_eq!(d.total(), 8_000 + 820 + 5_000 + 15_000);
        assert!(d.total().abs_diff(28_819) <= 1);
    }

    #[test]
    fn fifo_queues_back_to_back_packets() {
        let mut link = LinkState::new(
            LinkModel::ideal(1_000_000_000),
            NodeStageModel::zero(),
            NodeStageModel::zero(),
            LinkRng::new(0, 0),
        );
        let a = link.transmit(0, 8_000);
        let b = link.transmit(0, 8_000);
        assert_eq!(a.deliver_at, 8_000);
        assert_eq!(b.stages.queue, 8_000);
        assert_eq!(b.deliver_at, 16_000);
        for t in [a, b] {
            assert_eq!(t.deliver_at, t.stages.total());
        }
    }

    #[test]
    fn exact_accumulation_at_fractional_rates() {
        let mut link = LinkState::new(
            LinkModel::ideal(1_500_000_000),
            NodeStageModel::zero(),
            NodeStageModel::zero(),
            LinkRng::new(0, 0),
        );
        let mut last = 0;
        for _ in 0..3_000 {
            last = link.transmit(0, 11_200).deliver_at;
        }
        // 3000 × 11200 bits at 1.5 Gbps = 22.4 ms exactly
        assert_eq!(last, 22_400_000);
    }

    #[test]
    fn loss_accounting() {
        let mut link = LinkState::new(
            LinkModel { loss_rate: 0.3, ..LinkModel::default() },
            NodeStageModel::default(),
            NodeStageModel::default(),
            LinkRng::new(5, 1),
        );
        let mut t = 0;
        for _ in 0..10_000 {
            let tr = link.transmit(t, 12_000);
            assert_eq!(tr.deliver_at, t + tr.stages.total());
            t += 10_000;
        }
        let s = link.stats();
        assert_eq!(s.delivered + s.lost, s.sent);
        assert!((2_700..3_300).contains(&s.lost));
    }

    #[test]
    fn switching_stays_in_range_and_fifo_holds() {
        let mut link = LinkState::new(
            LinkModel { hops: 2, ..LinkModel::default() },
            NodeStageModel::default(),
            NodeStageModel::default(),
            LinkRng::new(9, 0),
        );
        let mut prev = 0;
        for i in 0..5_000u64 {
            let tr = link.transmit(i * 1_000, 11_200);
            assert!((10_000..=20_000).contains(&tr.stages.switching));
            assert!(tr.deliver_at >= prev);
            prev = tr.deliver_at;
        }
    }

    #[test]
    fn model_checks() {
        let bad = LinkModel { bandwidth_bps: 0, loss_rate: 1.5, ..LinkModel::default() };
        let fields: Vec<_> = bad.check().iter().map(|v| v.field).collect();
        assert_eq!(fields, ["bandwidth_bps", "loss_rate"]);
        assert!(LinkModel::default().check().is_empty());
    }
}
