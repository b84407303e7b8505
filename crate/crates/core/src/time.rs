//! Nanosecond time helpers shared by every module.
//!
//! All timestamps and durations are plain `u64` nanoseconds. Signed offsets
//! (clock corrections) are `i64` nanoseconds.

use std::fmt;

pub const NS: u64 = 1;
pub const US: u64 = 1_000;
pub const MS: u64 = 1_000_000;
pub const SEC: u64 = 1_000_000_000;

/// Time needed to clock `bits` onto a wire running at `rate_bps`, rounded up
/// to the next nanosecond.
pub fn serialization_ns(bits: u64, rate_bps: u64) -> u64 {
    assert!(rate_bps > 0, "rate must be positive");
    let num = bits as u128 * SEC as u128;
    num.div_ceil(rate_bps as u128) as u64
}

/// Formats nanoseconds as milliseconds with six decimals (exact to 1 ns).
pub fn fmt_ms(ns: u64) -> String {
    format!("{}.{:06}", ns / MS, ns % MS)
}

/// Parses a millisecond value printed by [`fmt_ms`] back into nanoseconds.
pub fn parse_ms(s: &str) -> Option<u64> {
    let (whole, frac) = match s.split_once('.') {
        Some((w, f)) => (w, f),
        None => (s, ""),
    };
    if frac.len() > 6 || whole.is_empty() {
        return None;
    }
    let whole: u64 = whole.parse().ok()?;
    let mut frac_ns: u64 = 0;
    for (i, c) in frac.chars().enumerate() {
        let d = c.to_digit(10)? as u64;
        frac_ns += d * 10u64.pow(5 - i as u32);
    }
    whole.checked_mul(MS)?.checked_add(frac_ns)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DurationParseError(pub String);

impl fmt::Display for DurationParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid duration {:?} (expected e.g. 7.3ms, 5us, 250ns, 1s)", self.0)
    }
}

impl std::error::Error for DurationParseError {}

/// Parses a human duration such as `7.3ms`, `5us`, `250ns`, `1.5s`.
/// A bare integer is taken as nanoseconds.
pub fn parse_duration(s: &str) -> Result<u64, DurationParseError> {
    let err = || DurationParseError(s.to_string());
    let t = s.trim();
    let split = t.find(|c: char| !(c.is_ascii_digit() || c == '.')).unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    if num.is_empty() {
        return Err(err());
    }
    let scale: u64 = match unit.trim() {
        "" | "ns" => NS,
        "us" | "µs" => US,
        "ms" => MS,
        "s" => SEC,
        _ => return Err(err()),
    };
    let (whole, frac) = num.split_once('.').unwrap_or((num, ""));
    if whole.is_empty() && frac.is_empty() {
        return Err(err());
    }
    let whole: u64 = if whole.is_empty() { 0 } else { whole.parse().map_err(|_| err())? };
    let mut total = whole.checked_mul(scale).ok_or_else(err)?;
    let mut place = scale;
    for c in frac.chars() {
        let d = c.to_digit(10).ok_or_else(err)? as u64;
        place /= 10;
        if place == 0 {
            if d != 0 {
                // finer than a nanosecond
                return Err(err());
            }
            continue;
        }
        total = total.checked_add(d * place).ok_or_else(err)?;
    }
    Ok(total)
}

/// Renders a duration in the most compact unit that represents it exactly.
pub fn format_duration(ns: u64) -> String {
    if ns == 0 {
        "0ns".to_string()
    } else if ns.is_multiple_of(SEC) {
        format!("{}s", ns / SEC)
    } else if ns.is_multiple_of(MS) {
        format!("{}ms", ns / MS)
    } else if ns.is_multiple_of(US) {
        format!("{}us", ns / US)
    } else {
        format!("{}ns", ns)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serialization_rounds_up() {
        assert_eq!(serialization_ns(3_520_000 * 8, 1_000_000_000), 28_160_000);
        assert_eq!(serialization_ns(3_520_000 * 8, 10_000_000_000), 2_816_000);
        // 1024 B at 10 Gbps is 819.2 ns
        assert_eq!(serialization_ns(1024 * 8, 10_000_000_000), 820);
    }

    #[test]
    fn durations_parse() {
        assert_eq!(parse_duration("7.3ms").unwrap(), 7_300_000);
        assert_eq!(parse_duration("5us").unwrap(), 5_000);
        assert_eq!(parse_duration("250").unwrap(), 250);
        assert_eq!(parse_duration("1.5s").unwrap(), 1_500_000_000);
        assert_eq!(parse_duration("66.6ms").unwrap(), 66_600_000);
        assert!(parse_duration("ms").is_err());
        assert!(parse_duration("3 parsecs").is_err());
        assert!(parse_duration("0.5ns").is_err());
    }

    #[test]
    fn ms_formatting_is_exact() {
        assert_eq!(fmt_ms(50_000_000), "50.000000");
        assert_eq!(fmt_ms(20_700_001), "20.700001");
        assert_eq!(parse_ms("20.700001"), Some(20_700_001));
        assert_eq!(parse_ms("7.3"), Some(7_300_000));
        assert_eq!(format_duration(7_300_000), "7300us");
        assert_eq!(parse_duration(&format_duration(7_300_000)).unwrap(), 7_300_000);
    }
}
