//! Network-layer probe experiment: isolated packets of several sizes sent
//! across one hop, with per-stage statistics.

use super::{LinkModel, LinkRng, LinkState, NodeStageModel};
use crate::metrics::percentile;
use crate::time::MS;

pub const STAGE_NAMES: [&str; 10] =
    ["tx_sw", "tx_hw", "queue", "serialization", "propagation", "switching", "reorder", "rx_hw", "rx_sw", "total"];

/// Probe spacing; far above any per-packet delay so probes never queue.
const PROBE_INTERVAL: u64 = MS;

/// A named hop to probe.
#[derive(Debug, Clone)]
pub struct ProbeSegment {
    pub name: String,
    pub link: LinkModel,
    pub tx: NodeStageModel,
    pub rx: NodeStageModel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageStats {
    pub mean_ns: f64,
    pub p50_ns: u64,
    pub p99_ns: u64,
    pub max_ns: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizeStats {
    pub packet_bytes: usize,
    pub sent: u64,
    pub lost: u64,
    /// Indexed like [`STAGE_NAMES`].
    pub stages: [StageStats; 10],
}

impl SizeStats {
    pub fn total(&self) -> StageStats {
        self.stages[9]
    }

    pub fn stage(&self, name: &str) -> Option<StageStats> {
        STAGE_NAMES.iter().position(|n| *n == name).map(|i| self.stages[i])
    }
}

/// Runs `samples_per_size` probes for each size. Every size replays the same
/// random streams, so only the serialization term differs between sizes.
pub fn run_probe_experiment(
    link: &LinkModel,
    node_tx: &NodeStageModel,
    node_rx: &NodeStageModel,
    packet_sizes: &[usize],
    samples_per_size: usize,
    seed: u64,
) -> Vec<SizeStats> {
    assert!(!packet_sizes.is_empty(), "at least one probe size required");
    assert!(samples_per_size >= 1, "at least one sample per size required");

    packet_sizes
        .iter()
        .map(|&size| {
            let mut state = LinkState::new(link.clone(), node_tx.clone(), node_rx.clone(), LinkRng::new(seed, 0));
            let mut columns: Vec<Vec<u64>> = (0..10).map(|_| Vec::with_capacity(samples_per_size)).collect();
            for i in 0..samples_per_size {
                let t = state.transmit(i as u64 * PROBE_INTERVAL, size as u64 * 8);
                if t.lost {
                    continue;
                }
                for (col, v) in columns.iter_mut().zip(t.stages.as_array()) {
                    col.push(v);
                }
                columns[9].push(t.stages.total());
            }
            let stats = state.stats();
            let stages = std::array::from_fn(|i| summarize(&mut columns[i]));
            SizeStats { packet_bytes: size, sent: stats.sent, lost: stats.lost, stages }
        })
        .collect()
}

fn summarize(values: &mut [u64]) -> StageStats {
    if values.is_empty() {
        return StageStats { mean_ns: 0.0, p50_ns: 0, p99_ns: 0, max_ns: 0 };
    }
    values.sort_unstable();
    let mean_ns = values.iter().map(|&v| v as f64).sum::<f64>() / values.len() as f64;
    StageStats {
        mean_ns,
        p50_ns: percentile(values, 50.0),
        p99_ns: percentile(values, 99.0),
        max_ns: *values.last().unwrap(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::US;

    #[test]
    fn totals_increase_with_size() {
        let link = LinkModel { distance_km: 1.0, hops: 2, ..LinkModel::default() };
        let node = NodeStageModel::default();
        let stats = run_probe_experiment(&link, &node, &node, &[128, 512, 1024], 300, 4);
        assert!(stats.windows(2).all(|w| w[0].total().mean_ns < w[1].total().mean_ns));
        for s in &stats {
            assert_eq!(s.sent, 300);
            assert!(s.total().max_ns < 50 * US);
        }
    }

    #[test]
    fn bare_link_is_pure_serialization() {
        let link = LinkModel::ideal(10_000_000_000);
        let zero = NodeStageModel::zero();
        let stats = run_probe_experiment(&link, &zero, &zero, &[1250], 1, 0);
        assert_eq!(stats[0].total().p50_ns, 1_000);
        assert_eq!(stats[0].total().mean_ns, 1_000.0);
        assert_eq!(stats[0].stage("serialization").unwrap().p50_ns, 1_000);
    }
}
