//! Simulation clock values.
//!
//! All times are integer nanoseconds so that event ordering and exported traces
//! are bit-exact across platforms.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A span of simulated time in nanoseconds.
pub type Nanos = u64;

pub const NANOS_PER_MICRO: Nanos = 1_000;
pub const NANOS_PER_MILLI: Nanos = 1_000_000;
pub const NANOS_PER_SEC: Nanos = 1_000_000_000;

/// An instant on the simulation clock, in nanoseconds since simulation start.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(Nanos);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_nanos(nanos: Nanos) -> Self {
        SimTime(nanos)
    }

    pub const fn from_millis(millis: u64) -> Self {
        SimTime(millis * NANOS_PER_MILLI)
    }

    pub const fn as_nanos(self) -> Nanos {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / NANOS_PER_SEC as f64
    }

    /// Time elapsed since `earlier`, or `None` if `earlier` is in the future.
    pub fn checked_since(self, earlier: SimTime) -> Option<Nanos> {
        self.0.checked_sub(earlier.0)
    }

    pub fn saturating_sub(self, span: Nanos) -> SimTime {
        SimTime(self.0.saturating_sub(span))
    }
}

impl Add<Nanos> for SimTime {
    type Output = SimTime;

    fn add(self, rhs: Nanos) -> SimTime {
        SimTime(
            self.0
                .checked_add(rhs)
                .expect("simulation time overflowed u64 nanoseconds"),
        )
    }
}

impl AddAssign<Nanos> for SimTime {
    fn add_assign(&mut self, rhs: Nanos) {
        *self = *self + rhs;
    }
}

impl Sub for SimTime {
    type Output = Nanos;

    /// Panics if `rhs` is later than `self`; use [`SimTime::checked_since`] when
    /// the order is not known.
    fn sub(self, rhs: SimTime) -> Nanos {
        self.0
            .checked_sub(rhs.0)
            .expect("subtracted a later SimTime from an earlier one")
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid duration `{text}`: {reason}")]
pub struct DurationParseError {
    pub text: String,
    pub reason: &'static str,
}

/// Parses a duration such as `500ms`, `1s`, `11.5ms`, `250us` or `42ns`.
///
/// Decimal fractions are parsed exactly; the result must be a whole number of
/// nanoseconds.
pub fn parse_duration(text: &str) -> Result<Nanos, DurationParseError> {
    let err = |reason| DurationParseError {
        text: text.to_string(),
        reason,
    };
    let split = text
        .find(|c: char| !(c.is_ascii_digit() || c == '.'))
        .ok_or_else(|| err("missing unit (ns, us, ms, s)"))?;
    let (number, unit) = text.split_at(split);
    let scale = match unit {
        "ns" => 1,
        "us" => NANOS_PER_MICRO,
        "ms" => NANOS_PER_MILLI,
        "s" => NANOS_PER_SEC,
        _ => return Err(err("unknown unit (expected ns, us, ms or s)")),
    };
    let (int_part, frac_part) = match number.split_once('.') {
        Some((i, f)) => (i, f),
        None => (number, ""),
    };
    if int_part.is_empty() || (number.contains('.') && frac_part.is_empty()) {
        return Err(err("malformed number"));
    }
    let whole: u64 = int_part.parse().map_err(|_| err("malformed number"))?;
    let mut total = whole.checked_mul(scale).ok_or_else(|| err("overflow"))?;
    let mut place = scale;
    for digit in frac_part.bytes() {
        if !digit.is_ascii_digit() {
            return Err(err("malformed number"));
        }
        let d = u64::from(digit - b'0');
        if place % 10 != 0 {
            if d != 0 {
                return Err(err("finer than one nanosecond"));
            }
            continue;
        }
        place /= 10;
        total = total
            .checked_add(d * place)
            .ok_or_else(|| err("overflow"))?;
    }
    Ok(total)
}

/// Formats a duration in the largest unit that represents it exactly.
pub fn format_duration(nanos: Nanos) -> String {
    if nanos == 0 {
        return "0ms".to_string();
    }
    for (scale, unit) in [
        (NANOS_PER_SEC, "s"),
        (NANOS_PER_MILLI, "ms"),
        (NANOS_PER_MICRO, "us"),
    ] {
        if nanos.is_multiple_of(scale) {
            return format!("{}{unit}", nanos / scale);
        }
    }
    format!("{nanos}ns")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_units_and_fractions() {
        assert_eq!(parse_duration("500ms"), Ok(500 * NANOS_PER_MILLI));
        assert_eq!(parse_duration("1s"), Ok(NANOS_PER_SEC));
        assert_eq!(parse_duration("0.5ms"), Ok(500_000));
        assert_eq!(parse_duration("11.111111ms"), Ok(11_111_111));
        assert_eq!(parse_duration("250us"), Ok(250_000));
        assert_eq!(parse_duration("7ns"), Ok(7));
    }

    #[test]
    fn rejects_bad_durations() {
        assert!(parse_duration("500").is_err());
        assert!(parse_duration("ms").is_err());
        assert!(parse_duration("1.ms").is_err());
        assert!(parse_duration("1.5ns").is_err());
        assert!(parse_duration("3 ms").is_err());
        assert!(parse_duration("-3ms").is_err());
    }

    #[test]
    fn format_is_canonical() {
        for text in ["500ms", "1s", "250us", "11111111ns", "0ms", "1500ms"] {
            assert_eq!(format_duration(parse_duration(text).unwrap()), text);
        }
    }

    #[test]
    fn arithmetic() {
        let t = SimTime::from_millis(5) + 1_000;
        assert_eq!(t.as_nanos(), 5_001_000);
        assert_eq!(t - SimTime::from_millis(5), 1_000);
        assert_eq!(SimTime::ZERO.checked_since(t), None);
    }
}
