//! Layered latency records, run statistics and the CSV report.
//!
//! Per frame:
//!
//! * `service_l = app_tx + frame_l + app_rx`
//! * `frame_l = network_l + frame_rx`
//! * `protocol_l = network_l + protocol_rx` on each hop
//!
//! The identities hold by construction and are checkable from the CSV alone,
//! since every duration is written exactly to the nanosecond.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clocksync::one_way_delay;
use crate::time::fmt_ms;
use crate::transport::{ReceiveLogEntry, SendLogEntry};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("incomplete record for frame {frame_id}: missing {source_name}")]
    Incomplete { frame_id: u32, source_name: &'static str },
    #[error("empty run: no frame records")]
    EmptyRun,
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[u64], p: f64) -> u64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Capture-side application record, in the sender's clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureRecord {
    pub frame_id: u32,
    pub capture_start: u64,
    pub capture_end: u64,
    pub overrun: bool,
}

impl CaptureRecord {
    pub fn app_tx(&self) -> u64 {
        self.capture_end - self.capture_start
    }
}

/// Render-side application record, in the receiver's clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderRecord {
    pub frame_id: u32,
    pub frame_complete_ts: u64,
    pub app_rx: u64,
    pub display_ts: u64,
}

/// Relay distribution record for one frame and one receiver, relay clock.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistributionEntry {
    pub frame_id: u32,
    pub upstream_complete_ts: u64,
    pub forward_start_ts: u64,
    pub forward_end_ts: u64,
    pub stalled: bool,
}

impl DistributionEntry {
    pub fn distribution_time(&self) -> u64 {
        self.forward_end_ts.saturating_sub(self.upstream_complete_ts)
    }
}

/// Estimated clock offsets (`master - local`) of the three nodes on a path.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PathOffsets {
    pub sender: i64,
    pub relay: i64,
    pub receiver: i64,
}

/// Everything known about one frame on one sender → relay → receiver path.
#[derive(Debug, Clone, Copy, Default)]
pub struct RecordSources<'a> {
    pub capture: Option<&'a CaptureRecord>,
    pub sender: Option<&'a SendLogEntry>,
    pub relay_upstream: Option<&'a ReceiveLogEntry>,
    pub relay_downstream: Option<&'a SendLogEntry>,
    pub distribution: Option<&'a DistributionEntry>,
    pub receiver: Option<&'a ReceiveLogEntry>,
    pub render: Option<&'a RenderRecord>,
    pub offsets: PathOffsets,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrameLatencyRecord {
    pub frame_id: u32,
    pub app_tx: Option<u64>,
    pub frame_tx: Option<u64>,
    pub network_l: Option<u64>,
    pub frame_rx: Option<u64>,
    pub frame_l: Option<u64>,
    pub app_rx: Option<u64>,
    pub service_l: Option<u64>,
    pub server_dist: Option<u64>,
    pub protocol_tx1: Option<u64>,
    pub protocol_rx1: Option<u64>,
    pub protocol_l1: Option<u64>,
    pub protocol_tx2: Option<u64>,
    pub protocol_rx2: Option<u64>,
    pub protocol_l2: Option<u64>,
    pub network_l1: Option<u64>,
    pub network_l2: Option<u64>,
    pub retransmits: u32,
    pub completed: bool,
    /// One-way delays that came out negative and were clamped to zero.
    pub clock_anomalies: u32,
}

fn add(a: Option<u64>, b: Option<u64>) -> Option<u64> {
    Some(a? + b?)
}

/// Builds a record for a completed frame. Every source must be present.
pub fn assemble_record(frame_id: u32, src: &RecordSources<'_>) -> Result<FrameLatencyRecord, MetricsError> {
    let need = |present: bool, source_name| {
        if present {
            Ok(())
        } else {
            Err(MetricsError::Incomplete { frame_id, source_name })
        }
    };
    need(src.capture.is_some(), "capture record")?;
    need(src.sender.is_some_and(|s| s.first_packet_send_ts.is_some()), "sender log")?;
    need(src.relay_upstream.is_some_and(|r| r.completed), "relay upstream log")?;
    need(src.relay_downstream.is_some_and(|s| s.first_packet_send_ts.is_some()), "relay downstream log")?;
    need(src.distribution.is_some(), "distribution log")?;
    need(src.receiver.is_some_and(|r| r.completed), "receiver log")?;
    need(src.render.is_some(), "render record")?;
    let rec = partial_record(frame_id, src);
    debug_assert!(rec.service_l.is_some() && rec.protocol_l2.is_some());
    Ok(rec)
}

/// Builds a record from whatever sources exist; missing quantities are
/// `None`. `completed` is set when the receiver finished the frame.
pub fn partial_record(frame_id: u32, src: &RecordSources<'_>) -> FrameLatencyRecord {
    let mut anomalies = 0;
    let mut owd = |recv: Option<u64>, send: Option<u64>, offset: i64| {
        let d = one_way_delay(recv?, send?, offset);
        if d.anomaly.is_some() {
            anomalies += 1;
        }
        Some(d.nanos)
    };
    let o = src.offsets;
    let completed = src.receiver.is_some_and(|r| r.completed);
    let rx = src.receiver.filter(|r| r.completed);
    let up = src.relay_upstream.filter(|r| r.completed);

    let app_tx = src.capture.map(|c| c.app_tx());
    let frame_tx = src.sender.and_then(|s| Some(s.last_packet_send_ts? - s.handoff_ts));
    let network_l =
        owd(rx.and_then(|r| r.first_recv_ts), src.sender.and_then(|s| s.first_packet_send_ts), o.sender - o.receiver);
    let frame_rx = rx.and_then(|r| r.receive_span());
    let frame_l = add(network_l, frame_rx);
    let app_rx = src.render.filter(|_| completed).map(|r| r.app_rx);
    let service_l = add(add(app_tx, frame_l), app_rx);

    let network_l1 = owd(up.and_then(|r| r.first_recv_ts), up.and_then(|r| r.embedded_first_ts), o.sender - o.relay);
    let protocol_rx1 = up.and_then(|r| r.receive_span());
    let network_l2 = owd(rx.and_then(|r| r.first_recv_ts), rx.and_then(|r| r.embedded_first_ts), o.relay - o.receiver);
    let protocol_rx2 = frame_rx;

    FrameLatencyRecord {
        frame_id,
        app_tx,
        frame_tx,
        network_l,
        frame_rx,
        frame_l,
        app_rx,
        service_l,
        server_dist: src.distribution.filter(|_| up.is_some()).map(|d| d.distribution_time()),
        protocol_tx1: src.sender.and_then(|s| s.protocol_tx()),
        protocol_rx1,
        protocol_l1: add(network_l1, protocol_rx1),
        protocol_tx2: src.relay_downstream.and_then(|s| s.protocol_tx()),
        protocol_rx2,
        protocol_l2: add(network_l2, protocol_rx2),
        network_l1,
        network_l2,
        retransmits: src.sender.map_or(0, |s| s.retransmit_count)
            + src.relay_downstream.map_or(0, |s| s.retransmit_count),
        completed,
        clock_anomalies: anomalies,
    }
}

pub type Accessor = fn(&FrameLatencyRecord) -> Option<u64>;

/// Metric columns in report order, with accessors.
pub const METRICS: [(&str, Accessor); 16] = [
    ("app_tx", |r| r.app_tx),
    ("frame_tx", |r| r.frame_tx),
    ("network_l", |r| r.network_l),
    ("frame_rx", |r| r.frame_rx),
    ("frame_l", |r| r.frame_l),
    ("app_rx", |r| r.app_rx),
    ("service_l", |r| r.service_l),
    ("server_dist", |r| r.server_dist),
    ("protocol_tx1", |r| r.protocol_tx1),
    ("protocol_rx1", |r| r.protocol_rx1),
    ("protocol_l1", |r| r.protocol_l1),
    ("protocol_tx2", |r| r.protocol_tx2),
    ("protocol_rx2", |r| r.protocol_rx2),
    ("protocol_l2", |r| r.protocol_l2),
    ("network_l1", |r| r.network_l1),
    ("network_l2", |r| r.network_l2),
];

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub name: &'static str,
    pub count: usize,
    pub mean_ns: f64,
    pub p50_ns: u64,
    pub p95_ns: u64,
    pub p99_ns: u64,
    pub min_ns: u64,
    pub max_ns: u64,
    /// Mean absolute difference between successive frames.
    pub jitter_ns: f64,
}

impl MetricSummary {
    fn of(name: &'static str, values: &[u64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_unstable();
        let mean_ns = values.iter().map(|&v| v as f64).sum::<f64>() / values.len() as f64;
        let jitter_ns = if values.len() < 2 {
            0.0
        } else {
            values.windows(2).map(|w| w[0].abs_diff(w[1]) as f64).sum::<f64>() / (values.len() - 1) as f64
        };
        Some(Self {
            name,
            count: values.len(),
            mean_ns,
            p50_ns: percentile(&sorted, 50.0),
            p95_ns: percentile(&sorted, 95.0),
            p99_ns: percentile(&sorted, 99.0),
            min_ns: sorted[0],
            max_ns: *sorted.last().unwrap(),
            jitter_ns,
        })
    }
}

/// Packet accounting for one directed link.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkCounts {
    pub link: String,
    pub sent: u64,
    pub delivered: u64,
    pub lost: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub metrics: Vec<MetricSummary>,
    pub frames_sent: usize,
    pub frames_completed: usize,
    pub frames_dropped: usize,
    /// Filled by the runner; `summarize` leaves it empty.
    pub links: Vec<LinkCounts>,
    /// Extra run counters (retransmissions, stalls, ...), in output order.
    pub counters: Vec<(String, u64)>,
}

impl RunSummary {
    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn mean_ms(&self, name: &str) -> Option<f64> {
        self.metric(name).map(|m| m.mean_ns / 1e6)
    }

    /// `(app_tx + app_rx) / service_l` over the means.
    pub fn application_share(&self) -> Option<f64> {
        let tx = self.metric("app_tx")?.mean_ns;
        let rx = self.metric("app_rx")?.mean_ns;
        let service = self.metric("service_l")?.mean_ns;
        (service > 0.0).then(|| (tx + rx) / service)
    }
}

/// Statistics over completed frames; dropped frames are only counted.
pub fn summarize(records: &[FrameLatencyRecord]) -> Result<RunSummary, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyRun);
    }
    let done: Vec<&FrameLatencyRecord> = records.iter().filter(|r| r.completed).collect();
    let metrics = METRICS
        .iter()
        .filter_map(|(name, get)| {
            let values: Vec<u64> = done.iter().filter_map(|r| get(r)).collect();
            MetricSummary::of(name, &values)
        })
        .collect();
    Ok(RunSummary {
        metrics,
        frames_sent: records.len(),
        frames_completed: done.len(),
        frames_dropped: records.len() - done.len(),
        links: Vec::new(),
        counters: Vec::new(),
    })
}

pub const FRAME_COLUMNS: [&str; 17] = [
    "frame_id",
    "app_tx_ms",
    "frame_tx_ms",
    "network_l_ms",
    "frame_rx_ms",
    "frame_l_ms",
    "app_rx_ms",
    "service_l_ms",
    "server_dist_ms",
    "protocol_tx1_ms",
    "protocol_rx1_ms",
    "protocol_l1_ms",
    "protocol_tx2_ms",
    "protocol_rx2_ms",
    "protocol_l2_ms",
    "retransmits",
    "completed",
];

fn ms(v: Option<u64>) -> String {
    v.map(fmt_ms).unwrap_or_default()
}

fn ms_f(ns: f64) -> String {
    format!("{:.6}", ns / 1e6)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MetricsError + '_ {
    move |source| MetricsError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> MetricsError + '_ {
    move |e| MetricsError::Io { path: path.to_path_buf(), source: e.into() }
}

fn write_rows<I>(path: &Path, header: &[&str], rows: I) -> Result<(), MetricsError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Per-frame CSV with the canonical column order.
pub fn write_frames_csv(path: &Path, records: &[FrameLatencyRecord]) -> Result<(), MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyRun);
    }
    write_rows(
        path,
        &FRAME_COLUMNS,
        records.iter().map(|r| {
            vec![
                r.frame_id.to_string(),
                ms(r.app_tx),
                ms(r.frame_tx),
                ms(r.network_l),
                ms(r.frame_rx),
                ms(r.frame_l),
                ms(r.app_rx),
                ms(r.service_l),
                ms(r.server_dist),
                ms(r.protocol_tx1),
                ms(r.protocol_rx1),
                ms(r.protocol_l1),
                ms(r.protocol_tx2),
                ms(r.protocol_rx2),
                ms(r.protocol_l2),
                r.retransmits.to_string(),
                u8::from(r.completed).to_string(),
            ]
        }),
    )
}

/// Per-hop network latency, which the per-frame CSV folds into protocol_l.
pub fn write_hops_csv(path: &Path, records: &[FrameLatencyRecord]) -> Result<(), MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyRun);
    }
    write_rows(
        path,
        &["frame_id", "network_l1_ms", "network_l2_ms", "clock_anomalies"],
        records
            .iter()
            .map(|r| vec![r.frame_id.to_string(), ms(r.network_l1), ms(r.network_l2), r.clock_anomalies.to_string()]),
    )
}

pub fn write_summary_csv(path: &Path, summary: &RunSummary) -> Result<(), MetricsError> {
    let mut rows: Vec<Vec<String>> = summary
        .metrics
        .iter()
        .map(|m| {
            vec![
                m.name.to_string(),
                m.count.to_string(),
                ms_f(m.mean_ns),
                fmt_ms(m.p50_ns),
                fmt_ms(m.p95_ns),
                fmt_ms(m.p99_ns),
                fmt_ms(m.min_ns),
                fmt_ms(m.max_ns),
                ms_f(m.jitter_ns),
            ]
        })
        .collect();
    let count_row = |name: &str, v: u64| {
        let mut row = vec![name.to_string(), v.to_string()];
        row.extend(std::iter::repeat_n(String::new(), 7));
        row
    };
    rows.push(count_row("frames_sent", summary.frames_sent as u64));
    rows.push(count_row("frames_completed", summary.frames_completed as u64));
    rows.push(count_row("frames_dropped", summary.frames_dropped as u64));
    for l in &summary.links {
        rows.push(count_row(&format!("{}_sent", l.link), l.sent));
        rows.push(count_row(&format!("{}_delivered", l.link), l.delivered));
        rows.push(count_row(&format!("{}_lost", l.link), l.lost));
    }
    for (name, v) in &summary.counters {
        rows.push(count_row(name, *v));
    }
    write_rows(
        path,
        &["metric", "count", "mean_ms", "p50_ms", "p95_ms", "p99_ms", "min_ms", "max_ms", "jitter_ms"],
        rows,
    )
}

/// Paths written by [`write_report`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub frames: PathBuf,
    pub hops: PathBuf,
    pub summary: PathBuf,
}

/// Writes `frames.csv`, `hops.csv` and `summary.csv` into `dir`. Nothing is
/// created for an empty record set.
pub fn write_report(
    dir: &Path,
    records: &[FrameLatencyRecord],
    summary: &RunSummary,
) -> Result<ReportFiles, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyRun);
    }
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let files =
        ReportFiles { frames: dir.join("frames.csv"), hops: dir.join("hops.csv"), summary: dir.join("summary.csv") };
    write_frames_csv(&files.frames, records)?;
    write_hops_csv(&files.hops, records)?;
    write_summary_csv(&files.summary, summary)?;
    Ok(files)
}

/// Human-readable summary table.
pub fn render_table(summary: &RunSummary, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(
        out,
        "{:<14} {:>6} {:>12} {:>12} {:>12} {:>12}",
        "metric", "count", "mean_ms", "p50_ms", "p99_ms", "jitter_ms"
    )?;
    for m in &summary.metrics {
        writeln!(
            out,
            "{:<14} {:>6} {:>12.3} {:>12.3} {:>12.3} {:>12.3}",
            m.name,
            m.count,
            m.mean_ns / 1e6,
            m.p50_ns as f64 / 1e6,
            m.p99_ns as f64 / 1e6,
            m.jitter_ns / 1e6
        )?;
    }
    writeln!(
        out,
        "frames: {} sent, {} completed, {} dropped",
        summary.frames_sent, summary.frames_completed, summary.frames_dropped
    )?;
    if let Some(share) = summary.application_share() {
        writeln!(out, "application share of service latency: {:.1}%", share * 100.0)?;
    }
    Ok(())
}

/// Writes a `key,value` CSV.
pub fn write_kv_csv(path: &Path, rows: &[(String, String)]) -> Result<(), MetricsError> {
    let mut f = File::create(path).map_err(io_err(path))?;
    let mut body = String::from("key,value\n");
    for (k, v) in rows {
        body.push_str(&format!("{k},{v}\n"));
    }
    f.write_all(body.as_bytes()).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::{MS, US};

    fn full_sources(
    ) -> (CaptureRecord, SendLogEntry, ReceiveLogEntry, SendLogEntry, DistributionEntry, ReceiveLogEntry, RenderRecord)
    {
        let t0 = 1_000 * MS;
        let capture = CaptureRecord { frame_id: 7, capture_start: t0, capture_end: t0 + 7_300 * US, overrun: false };
        let sender = SendLogEntry {
            frame_id: 7,
            handoff_ts: t0 + 7_300 * US,
            first_packet_send_ts: Some(t0 + 7_300 * US),
            last_packet_send_ts: Some(t0 + 7_300 * US + 14_080 * US),
            packet_count: 144,
            retransmit_count: 1,
            ack_ts: None,
        };
        let relay_up = ReceiveLogEntry {
            frame_id: 7,
            first_recv_ts: Some(t0 + 7_300 * US + 342 * US),
            last_recv_ts: Some(t0 + 7_300 * US + 342 * US + 15_200 * US),
            embedded_first_ts: Some(t0 + 7_300 * US),
            nack_count: 0,
            packets: 144,
            completed: true,
        };
        let relay_down = SendLogEntry {
            frame_id: 7,
            handoff_ts: t0 + 8 * MS,
            first_packet_send_ts: Some(t0 + 8 * MS),
            last_packet_send_ts: Some(t0 + 27 * MS),
            packet_count: 144,
            retransmit_count: 2,
            ack_ts: None,
        };
        let dist = DistributionEntry {
            frame_id: 7,
            upstream_complete_ts: t0 + 22_842 * US,
            forward_start_ts: t0 + 8 * MS,
            forward_end_ts: t0 + 27 * MS,
            stalled: false,
        };
        let rx = ReceiveLogEntry {
            frame_id: 7,
            first_recv_ts: Some(t0 + 8_500 * US),
            last_recv_ts: Some(t0 + 28 * MS),
            embedded_first_ts: Some(t0 + 8 * MS),
            nack_count: 0,
            packets: 144,
            completed: true,
        };
        let render =
            RenderRecord { frame_id: 7, frame_complete_ts: t0 + 28 * MS, app_rx: 22 * MS, display_ts: t0 + 50 * MS };
        (capture, sender, relay_up, relay_down, dist, rx, render)
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile(&v, 50.0), 50);
        assert_eq!(percentile(&v, 99.0), 99);
        assert_eq!(percentile(&v, 100.0), 100);
        assert_eq!(percentile(&v, 0.0), 1);
        assert_eq!(percentile(&[5], 95.0), 5);
    }

    #[test]
    fn fig8_decomposition() {
        let (c, s, up, down, d, rx, r) = full_sources();
        let src = RecordSources {
            capture: Some(&c),
            sender: Some(&s),
            relay_upstream: Some(&up),
            relay_downstream: Some(&down),
            distribution: Some(&d),
            receiver: Some(&rx),
            render: Some(&r),
            offsets: PathOffsets::default(),
        };
        let rec = assemble_record(7, &src).unwrap();
        assert_eq!(rec.app_tx, Some(7_300 * US));
        assert_eq!(rec.network_l, Some(1_200 * US));
        assert_eq!(rec.frame_rx, Some(19_500 * US));
        assert_eq!(rec.frame_l, Some(20_700 * US));
        assert_eq!(rec.service_l, Some(50 * MS));
        assert_eq!(rec.network_l1, Some(342 * US));
        assert_eq!(rec.protocol_l1, Some(15_542 * US));
        assert_eq!(rec.protocol_tx1, Some(14_080 * US));
        assert_eq!(rec.network_l2, Some(500 * US));
        assert_eq!(rec.server_dist, Some(4_158 * US));
        assert_eq!(rec.retransmits, 3);
        assert!(rec.completed);
    }

    #[test]
    fn offsets_are_applied_per_path() {
        let (c, mut s, mut up, down, d, rx, r) = full_sources();
        // sender clock lags master by 3 ms
        let lag = 3 * MS;
        for ts in [&mut s.first_packet_send_ts, &mut s.last_packet_send_ts] {
            *ts = ts.map(|t| t - lag);
        }
        s.handoff_ts -= lag;
        up.embedded_first_ts = up.embedded_first_ts.map(|t| t - lag);
        let mut src = RecordSources {
            capture: Some(&c),
            sender: Some(&s),
            relay_upstream: Some(&up),
            relay_downstream: Some(&down),
            distribution: Some(&d),
            receiver: Some(&rx),
            render: Some(&r),
            offsets: PathOffsets::default(),
        };
        let raw = partial_record(7, &src);
        assert_eq!(raw.network_l1, Some(342 * US + lag));
        assert_eq!(raw.network_l, Some(1_200 * US + lag));
        src.offsets.sender = lag as i64;
        let fixed = partial_record(7, &src);
        assert_eq!(fixed.network_l1, Some(342 * US));
        assert_eq!(fixed.network_l, Some(1_200 * US));
    }

    #[test]
    fn all_zero_record_is_degenerate_but_consistent() {
        let c = CaptureRecord { frame_id: 0, capture_start: 5, capture_end: 5, overrun: false };
        let s = SendLogEntry {
            frame_id: 0,
            handoff_ts: 5,
            first_packet_send_ts: Some(5),
            last_packet_send_ts: Some(5),
            ..Default::default()
        };
        let l = ReceiveLogEntry {
            frame_id: 0,
            first_recv_ts: Some(5),
            last_recv_ts: Some(5),
            embedded_first_ts: Some(5),
            completed: true,
            ..Default::default()
        };
        let d = DistributionEntry {
            frame_id: 0,
            upstream_complete_ts: 5,
            forward_start_ts: 5,
            forward_end_ts: 5,
            stalled: false,
        };
        let r = RenderRecord { frame_id: 0, frame_complete_ts: 5, app_rx: 0, display_ts: 5 };
        let src = RecordSources {
            capture: Some(&c),
            sender: Some(&s),
            relay_upstream: Some(&l),
            relay_downstream: Some(&s),
            distribution: Some(&d),
            receiver: Some(&l),
            render: Some(&r),
            offsets: PathOffsets::default(),
        };
        let rec = assemble_record(0, &src).unwrap();
        for (name, get) in METRICS {
            assert_eq!(get(&rec), Some(0), "{name}");
        }
    }

    #[test]
    fn missing_source_is_named() {
        let (c, s, up, down, d, _, r) = full_sources();
        let src = RecordSources {
            capture: Some(&c),
            sender: Some(&s),
            relay_upstream: Some(&up),
            relay_downstream: Some(&down),
            distribution: Some(&d),
            receiver: None,
            render: Some(&r),
            offsets: PathOffsets::default(),
        };
        let err = assemble_record(7, &src).unwrap_err();
        assert_eq!(err.to_string(), "incomplete record for frame 7: missing receiver log");
    }

    fn rec(frame_id: u32, service: u64) -> FrameLatencyRecord {
        FrameLatencyRecord { frame_id, service_l: Some(service), completed: true, ..Default::default() }
    }

    #[test]
    fn summary_of_identical_records() {
        let records: Vec<_> = (0..300).map(|i| rec(i, 50 * MS)).collect();
        let s = summarize(&records).unwrap();
        let m = s.metric("service_l").unwrap();
        assert_eq!(m.mean_ns, 50e6);
        assert_eq!(m.jitter_ns, 0.0);
        assert_eq!((m.p50_ns, m.p99_ns, m.min_ns, m.max_ns), (50 * MS, 50 * MS, 50 * MS, 50 * MS));
        assert_eq!(s.frames_completed, 300);
    }

    #[test]
    fn alternating_values_jitter() {
        let records: Vec<_> = (0..10).map(|i| rec(i, if i % 2 == 0 { 10 * MS } else { 20 * MS })).collect();
        assert_eq!(summarize(&records).unwrap().metric("service_l").unwrap().jitter_ns, 10e6);
    }

    #[test]
    fn dropped_frames_are_counted_not_averaged() {
        let mut records: Vec<_> = (0..4).map(|i| rec(i, 10 * MS)).collect();
        records.push(FrameLatencyRecord {
            frame_id: 4,
            service_l: Some(999 * MS),
            completed: false,
            ..Default::default()
        });
        let s = summarize(&records).unwrap();
        assert_eq!((s.frames_sent, s.frames_completed, s.frames_dropped), (5, 4, 1));
        assert_eq!(s.metric("service_l").unwrap().max_ns, 10 * MS);
    }

    #[test]
    fn empty_run_is_an_error() {
        assert!(matches!(summarize(&[]), Err(MetricsError::EmptyRun)));
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let s = summarize(&[rec(0, 1)]).unwrap();
        assert!(matches!(write_report(&out, &[], &s), Err(MetricsError::EmptyRun)));
        assert!(!out.exists());
    }

    #[test]
    fn report_has_header_plus_rows_and_is_stable() {
        let records: Vec<_> = (0..300).map(|i| rec(i, 50 * MS + i as u64)).collect();
        let s = summarize(&records).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_report(dir.path(), &records, &s).unwrap();
        let text = std::fs::read_to_string(&files.frames).unwrap();
        assert_eq!(text.lines().count(), 301);
        assert_eq!(text.lines().next().unwrap(), FRAME_COLUMNS.join(","));
        assert!(text.lines().nth(2).unwrap().contains(",50.000001,"));
        let again = tempfile::tempdir().unwrap();
        let files2 = write_report(again.path(), &records, &s).unwrap();
        assert_eq!(std::fs::read(&files.summary).unwrap(), std::fs::read(&files2.summary).unwrap());
    }

    #[test]
    fn io_errors_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, b"x").unwrap();
        let s = summarize(&[rec(0, 1)]).unwrap();
        let err = write_report(&blocker.join("sub"), &[rec(0, 1)], &s).unwrap_err();
        assert!(err.to_string().contains("file"), "{err}");
    }
}
