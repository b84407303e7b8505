//! Node clocks and two-way offset estimation.
//!
//! Offsets are expressed as `master_time - local_time`: adding a node's
//! offset to one of its local timestamps yields master time. The master's
//! offset is zero.
//!
//! A sync exchange records `t1` (slave send), `t2` (master receive), `t3`
//! (master send) and `t4` (slave receive) and estimates
//! `offset = ((t2 - t1) - (t4 - t3)) / 2`, which is exact for symmetric paths
//! and off by half the asymmetry otherwise.

use std::sync::atomic::{AtomicI64, Ordering};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::Rng;
use thiserror::Error;

use crate::rng::StreamRng;
use crate::time::MS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockRole {
    Master,
    Slave,
}

#[derive(Debug)]
pub struct NodeClock {
    role: ClockRole,
    true_offset: i64,
    estimated_offset: AtomicI64,
    drift_ppm: f64,
    /// Virtual time at which drift starts accumulating.
    epoch: u64,
}

impl Clone for NodeClock {
    fn clone(&self) -> Self {
        Self {
            role: self.role,
            true_offset: self.true_offset,
            estimated_offset: AtomicI64::new(self.estimated_offset()),
            drift_ppm: self.drift_ppm,
            epoch: self.epoch,
        }
    }
}

impl NodeClock {
    pub fn master() -> Self {
        Self { role: ClockRole::Master, true_offset: 0, estimated_offset: AtomicI64::new(0), drift_ppm: 0.0, epoch: 0 }
    }

    /// A slave whose clock lags master time by `true_offset` ns.
    pub fn slave(true_offset: i64, drift_ppm: f64, epoch: u64) -> Self {
        Self { role: ClockRole::Slave, true_offset, estimated_offset: AtomicI64::new(0), drift_ppm, epoch }
    }

    pub fn role(&self) -> ClockRole {
        self.role
    }

    pub fn true_offset(&self) -> i64 {
        self.true_offset
    }

    pub fn drift_ppm(&self) -> f64 {
        self.drift_ppm
    }

    pub fn estimated_offset(&self) -> i64 {
        self.estimated_offset.load(Ordering::Acquire)
    }

    /// Ignored on the master.
    pub fn set_estimated_offset(&self, offset: i64) {
        if self.role == ClockRole::Slave {
            self.estimated_offset.store(offset, Ordering::Release);
        }
    }

    fn drift_ns(&self, t: u64) -> i64 {
        if self.drift_ppm == 0.0 {
            0
        } else {
            ((t as f64 - self.epoch as f64) * self.drift_ppm / 1e6).round() as i64
        }
    }

    /// Local reading at virtual (master) time `t`.
    pub fn read(&self, t: u64) -> u64 {
        let local = t as i64 - self.true_offset + self.drift_ns(t);
        assert!(local >= 0, "clock reading before local epoch");
        local as u64
    }

    /// Virtual time at which this clock reads `local`.
    pub fn to_true(&self, local: u64) -> u64 {
        if self.drift_ppm == 0.0 {
            return (local as i64 + self.true_offset) as u64;
        }
        let k = self.drift_ppm / 1e6;
        let t = (local as f64 + self.true_offset as f64 + self.epoch as f64 * k) / (1.0 + k);
        let mut t = t.round() as u64;
        // settle rounding so that read(t) >= local
        while self.read(t) < local {
            t += 1;
        }
        t
    }
}

/// Offset to add to a sender-clock timestamp to express it in the receiver's
/// clock, from both nodes' current estimates.
pub fn relative_offset(sender: &NodeClock, receiver: &NodeClock) -> i64 {
    sender.estimated_offset() - receiver.estimated_offset()
}

/// Dedicated synchronization path between a slave and the master.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncPath {
    pub slave_to_master: u64,
    pub master_to_slave: u64,
    /// Master processing time between receiving and answering.
    pub turnaround: u64,
    pub loss_rate: f64,
    pub max_retries: u32,
    pub retry_interval: u64,
}

impl SyncPath {
    pub fn symmetric(one_way: u64) -> Self {
        Self {
            slave_to_master: one_way,
            master_to_slave: one_way,
            turnaround: 0,
            loss_rate: 0.0,
            max_retries: 3,
            retry_interval: 10 * MS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyncSample {
    pub t1: u64,
    pub t2: u64,
    pub t3: u64,
    pub t4: u64,
    pub offset: i64,
    /// Virtual time the exchange completed.
    pub completed_at: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SyncError {
    #[error("sync failed: no response after {attempts} attempts")]
    Failed { attempts: u32 },
}

/// The two-way offset estimate.
pub fn estimate_offset(t1: u64, t2: u64, t3: u64, t4: u64) -> i64 {
    let fwd = t2 as i128 - t1 as i128;
    let rev = t4 as i128 - t3 as i128;
    ((fwd - rev) / 2) as i64
}

/// Runs one exchange starting at virtual time `now` and applies the estimate
/// to the slave. Lost messages are retried up to `path.max_retries` times.
pub fn sync_exchange(
    slave: &NodeClock,
    master: &NodeClock,
    path: &SyncPath,
    now: u64,
    loss_rng: &mut StreamRng,
) -> Result<SyncSample, SyncError> {
    let mut start = now;
    for _ in 0..=path.max_retries {
        let req_lost = path.loss_rate > 0.0 && loss_rng.gen::<f64>() < path.loss_rate;
        let resp_lost = path.loss_rate > 0.0 && loss_rng.gen::<f64>() < path.loss_rate;
        if req_lost || resp_lost {
            start += path.retry_interval;
            continue;
        }
        let at_master = start + path.slave_to_master;
        let reply = at_master + path.turnaround;
        let back = reply + path.master_to_slave;
        let (t1, t2, t3, t4) = (slave.read(start), master.read(at_master), master.read(reply), slave.read(back));
        let offset = estimate_offset(t1, t2, t3, t4);
        slave.set_estimated_offset(offset);
        return Ok(SyncSample { t1, t2, t3, t4, offset, completed_at: back });
    }
    Err(SyncError::Failed { attempts: path.max_retries + 1 })
}

/// Result of a one-way delay computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OneWayDelay {
    /// Never negative; zero when `anomaly` is set.
    pub nanos: u64,
    /// The raw negative value, when clocks disagree beyond the true delay.
    pub anomaly: Option<i64>,
}

/// `recv - (send + offset)` where `offset` maps the sender's clock onto the
/// receiver's.
pub fn one_way_delay(recv_ts_local: u64, embedded_send_ts_remote: u64, offset: i64) -> OneWayDelay {
    let raw = recv_ts_local as i128 - (embedded_send_ts_remote as i128 + offset as i128);
    if raw < 0 {
        OneWayDelay { nanos: 0, anomaly: Some(raw as i64) }
    } else {
        OneWayDelay { nanos: raw as u64, anomaly: None }
    }
}

/// Host time for socket mode: a wall-clock anchor advanced by the monotonic
/// clock, so readings never step backwards.
#[derive(Debug, Clone)]
pub struct HostClock {
    wall_anchor: u64,
    mono_anchor: Instant,
}

impl Default for HostClock {
    fn default() -> Self {
        Self::new()
    }
}

impl HostClock {
    pub fn new() -> Self {
        let wall = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos() as u64).unwrap_or(0);
        Self { wall_anchor: wall, mono_anchor: Instant::now() }
    }

    pub fn now(&self) -> u64 {
        self.wall_anchor + self.mono_anchor.elapsed().as_nanos() as u64
    }

    /// Monotonic instant corresponding to the host reading `ts`.
    pub fn instant_of(&self, ts: u64) -> Instant {
        self.mono_anchor + std::time::Duration::from_nanos(ts.saturating_sub(self.wall_anchor))
    }
}
