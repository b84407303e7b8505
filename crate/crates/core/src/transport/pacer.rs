use crate::time::SEC;

/// Fixed-rate pacer: a token bucket refilled continuously at `rate_bps` with
/// a depth of one packet. A packet may start once the bucket is non-negative;
/// its bits are debited on emission, so back-to-back packets are spaced by
/// exactly `wire_bits / rate_bps`.
///
/// Positions are kept in units of `1 / rate_bps` ns so that long runs at
/// rates that do not divide 10^9 accumulate no rounding error.
#[derive(Debug, Clone)]
pub struct Pacer {
    rate_bps: u64,
    free_at: u128,
}

/// Emission window of one packet, in the pacer's clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Emission {
    pub start: u64,
    pub end: u64,
}

impl Pacer {
    pub fn new(rate_bps: u64) -> Self {
        assert!(rate_bps > 0, "pacing rate must be positive");
        Self { rate_bps, free_at: 0 }
    }

    pub fn rate_bps(&self) -> u64 {
        self.rate_bps
    }

    /// Earliest instant the next packet may start.
    pub fn available_at(&self) -> u64 {
        self.free_at.div_ceil(self.rate_bps as u128) as u64
    }

    pub fn emit(&mut self, now: u64, wire_bits: u64) -> Emission {
        let rate = self.rate_bps as u128;
        // Waking at the rounded-up `available_at` keeps the exact position.
        let now = now as u128 * rate;
        let start = if now < self.free_at + rate { self.free_at } else { now };
        let end = start + wire_bits as u128 * SEC as u128;
        self.free_at = end;
        Emission { start: start.div_ceil(rate) as u64, end: end.div_ceil(rate) as u64 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn back_to_back_spacing() {
        let mut p = Pacer::new(2_000_000_000);
        let a = p.emit(1_000, 11_200);
        assert_eq!(a, Emission { start: 1_000, end: 6_600 });
        assert_eq!(p.available_at(), 6_600);
        let b = p.emit(1_000, 11_200);
        assert_eq!(b.start, 6_600);
    }

    #[test]
    fn waking_at_available_keeps_fraction() {
        let mut p = Pacer::new(1_500_000_000);
        let first = p.emit(0, 8 * 1_400);
        let mut last = first;
        for _ in 1..10_000 {
            last = p.emit(p.available_at(), 8 * 1_400);
        }
        assert_eq!(last.end - first.start, 74_666_667);
    }

    #[test]
    fn idle_pacer_starts_immediately() {
        let mut p = Pacer::new(1_000_000_000);
        p.emit(0, 8_000);
        let e = p.emit(1_000_000, 8_000);
        assert_eq!(e.start, 1_000_000);
    }

    #[test]
    fn frame_span_is_exact() {
        let mut p = Pacer::new(1_500_000_000);
        let first = p.emit(0, 8 * 1_400);
        let mut last = first;
        for _ in 1..10_000 {
            last = p.emit(0, 8 * 1_400);
        }
        // 14e6 bytes at 1.5 Gbps = 74.666...ms, rounded up
        assert_eq!(last.end - first.start, 74_666_667);
    }
}
