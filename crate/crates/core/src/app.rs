//! Application endpoint emulation: frame capture at a fixed cadence and
//! render-side processing, both with configurable processing times.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::frame::{make_synthetic_frame, FrameError, VolumetricFrame};
use crate::metrics::{CaptureRecord, RenderRecord};
use crate::rng::{self, StreamRng};
use crate::time::{format_duration, parse_duration, MS, SEC};

/// A processing-time distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DurationDist {
    Fixed(u64),
    /// Inclusive on both ends.
    Uniform {
        min: u64,
        max: u64,
    },
}

impl DurationDist {
    pub fn sample(&self, rng: &mut StreamRng) -> u64 {
        match *self {
            DurationDist::Fixed(v) => v,
            DurationDist::Uniform { min, max } if min == max => min,
            DurationDist::Uniform { min, max } => rng.gen_range(min..=max),
        }
    }

    pub fn max(&self) -> u64 {
        match *self {
            DurationDist::Fixed(v) => v,
            DurationDist::Uniform { max, .. } => max,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            DurationDist::Fixed(v) => v as f64,
            DurationDist::Uniform { min, max } => (min as f64 + max as f64) / 2.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        match *self {
            DurationDist::Fixed(_) => true,
            DurationDist::Uniform { min, max } => min <= max,
        }
    }
}

impl fmt::Display for DurationDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            DurationDist::Fixed(v) => f.write_str(&format_duration(v)),
            DurationDist::Uniform { min, max } => write!(f, "{}..{}", format_duration(min), format_duration(max)),
        }
    }
}

/// `7.3ms` is fixed; `20ms..24ms` is uniform.
impl FromStr for DurationDist {
    type Err = crate::time::DurationParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once("..") {
            Some((a, b)) => Ok(DurationDist::Uniform { min: parse_duration(a)?, max: parse_duration(b)? }),
            None => Ok(DurationDist::Fixed(parse_duration(s)?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptureProfile {
    pub fps: f64,
    pub app_tx: DurationDist,
    pub color_bytes: usize,
    pub depth_bytes: usize,
    pub audio_bytes: usize,
}

impl Default for CaptureProfile {
    fn default() -> Self {
        Self {
            fps: 30.0,
            app_tx: DurationDist::Fixed(7_300_000),
            color_bytes: 1_400_000,
            depth_bytes: 2_100_000,
            audio_bytes: 20_000,
        }
    }
}

impl CaptureProfile {
    pub fn frame_bytes(&self) -> usize {
        self.color_bytes + self.depth_bytes + self.audio_bytes
    }

    /// Offset of tick `k` from the first tick. Computed per tick, not
    /// accumulated, so ticks sit exactly on the `k / fps` grid.
    pub fn tick_offset(&self, k: u64) -> u64 {
        (k as f64 * SEC as f64 / self.fps).round() as u64
    }

    pub fn interval(&self) -> u64 {
        self.tick_offset(1)
    }

    /// Frames produced in `duration_s` seconds.
    pub fn frames_in(&self, duration_s: f64) -> u64 {
        (duration_s * self.fps + 1e-9).floor() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderProfile {
    pub app_rx: DurationDist,
}

impl Default for RenderProfile {
    fn default() -> Self {
        Self { app_rx: DurationDist::Fixed(22 * MS) }
    }
}

/// Capture side of the sender application.
pub struct Capture {
    profile: CaptureProfile,
    seed: u64,
    rng: StreamRng,
    overruns: u64,
}

impl Capture {
    pub fn new(profile: CaptureProfile, seed: u64) -> Self {
        Self { profile, seed, rng: rng::stream(seed, "app-tx", 0), overruns: 0 }
    }

    pub fn profile(&self) -> &CaptureProfile {
        &self.profile
    }

    pub fn overruns(&self) -> u64 {
        self.overruns
    }

    /// Captures frame `frame_id` starting at `now` (sender clock). The frame
    /// is ready for the transport at `record.capture_end`. An App(Tx) of a
    /// whole interval or more counts as an overrun; the next tick still runs.
    pub fn capture_tick(&mut self, frame_id: u32, now: u64) -> Result<(VolumetricFrame, CaptureRecord), FrameError> {
        let app_tx = self.profile.app_tx.sample(&mut self.rng);
        let overrun = app_tx >= self.profile.interval();
        if overrun {
            self.overruns += 1;
        }
        let p = &self.profile;
        let frame = make_synthetic_frame(frame_id, p.color_bytes, p.depth_bytes, p.audio_bytes, self.seed)?
            .with_capture(now, now + app_tx)?;
        Ok((frame, CaptureRecord { frame_id, capture_start: now, capture_end: now + app_tx, overrun }))
    }
}

/// Render side of one receiver application.
pub struct Render {
    profile: RenderProfile,
    rng: StreamRng,
}

impl Render {
    pub fn new(profile: RenderProfile, seed: u64, receiver: u64) -> Self {
        Self { profile, rng: rng::stream(seed, "app-rx", receiver) }
    }

    pub fn render_complete(&mut self, frame_id: u32, frame_complete_ts: u64) -> RenderRecord {
        let app_rx = self.profile.app_rx.sample(&mut self.rng);
        RenderRecord { frame_id, frame_complete_ts, app_rx, display_ts: frame_complete_ts + app_rx }
    }
}

/// Real CPU work over a payload (FNV-1a), for socket runs that should spend
/// genuine processing time.
pub fn busy_work(payload: &[u8]) -> u64 {
    payload.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(app_tx: DurationDist) -> CaptureProfile {
        CaptureProfile { app_tx, color_bytes: 100, depth_bytes: 50, audio_bytes: 10, ..Default::default() }
    }

    #[test]
    fn fixed_app_tx_record() {
        let mut c = Capture::new(small(DurationDist::Fixed(7_300_000)), 1);
        for id in 0..5 {
            let (frame, rec) = c.capture_tick(id, 1_000 + id as u64).unwrap();
            assert_eq!(rec.app_tx(), 7_300_000);
            assert_eq!(frame.capture_end(), rec.capture_end);
            assert!(!rec.overrun);
        }
    }

    #[test]
    fn zero_app_tx_collapses_capture_window() {
        let mut c = Capture::new(small(DurationDist::Fixed(0)), 1);
        let (f, _) = c.capture_tick(0, 55).unwrap();
        assert_eq!(f.capture_start(), f.capture_end());
    }

    #[test]
    fn thirty_fps_for_ten_seconds() {
        let p = CaptureProfile::default();
        assert_eq!(p.frames_in(10.0), 300);
        assert_eq!(p.interval(), 33_333_333);
        assert_eq!(p.tick_offset(3), SEC / 10);
        assert_eq!(p.tick_offset(300), 10 * SEC);
    }

    #[test]
    fn overrun_is_counted() {
        let mut c = Capture::new(small(DurationDist::Fixed(40 * MS)), 1);
        let (_, rec) = c.capture_tick(0, 0).unwrap();
        assert!(rec.overrun);
        c.capture_tick(1, 33 * MS).unwrap();
        assert_eq!(c.overruns(), 2);
    }

    #[test]
    fn render_display_time() {
        let mut r = Render::new(RenderProfile::default(), 0, 0);
        let rec = r.render_complete(3, 100 * MS);
        assert_eq!(rec.display_ts, 122 * MS);
        let mut zero = Render::new(RenderProfile { app_rx: DurationDist::Fixed(0) }, 0, 0);
        assert_eq!(zero.render_complete(3, 100).display_ts, 100);
    }

    #[test]
    fn uniform_render_is_seeded() {
        let p = RenderProfile { app_rx: DurationDist::Uniform { min: 20 * MS, max: 24 * MS } };
        let run = |seed| {
            let mut r = Render::new(p.clone(), seed, 0);
            (0..50).map(|i| r.render_complete(i, 0).app_rx).collect::<Vec<_>>()
        };
        let a = run(9);
        assert_eq!(a, run(9));
        assert_ne!(a, run(10));
        assert!(a.iter().all(|v| (20 * MS..=24 * MS).contains(v)));
    }

    #[test]
    fn dist_parsing() {
        assert_eq!("7.3ms".parse::<DurationDist>().unwrap(), DurationDist::Fixed(7_300_000));
        let u: DurationDist = "20ms..24ms".parse().unwrap();
        assert_eq!(u, DurationDist::Uniform { min: 20 * MS, max: 24 * MS });
        assert_eq!(u.to_string().parse::<DurationDist>().unwrap(), u);
        assert!("fast".parse::<DurationDist>().is_err());
    }

    #[test]
    fn busy_work_depends_on_content() {
        assert_ne!(busy_work(b"abc"), busy_work(b"abd"));
    }
}
