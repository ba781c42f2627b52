//! ASCII joint-command encoding: `TS|<stamp_ns>|<origin_ns>|<angle>(,<angle>)*`.
//!
//! Angles are written with exactly six fractional digits. Encoding goes through
//! integer micro-radians so decode followed by encode is bit-exact.

use std::fmt;

use thiserror::Error;

use super::JointVector;
use crate::time::SimTime;

const PREFIX: &str = "TS|";
const MICRO: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TransformString(String);

impl TransformString {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for TransformString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<TransformString> for String {
    fn from(ts: TransformString) -> String {
        ts.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed transform string at byte {offset}: {reason}")]
pub struct ParseError {
    pub offset: usize,
    pub reason: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedTransform {
    pub joints: JointVector,
    pub stamp: SimTime,
    pub origin_user_stamp: SimTime,
}

fn micro_radians(angle: f64) -> i64 {
    (angle * MICRO).round() as i64
}

fn push_angle(out: &mut String, micros: i64) {
    use fmt::Write;
    let sign = if micros < 0 { "-" } else { "" };
    let abs = micros.unsigned_abs();
    let _ = write!(out, "{sign}{}.{:06}", abs / 1_000_000, abs % 1_000_000);
}

pub fn encode_transform_string(
    q: &JointVector,
    stamp: SimTime,
    origin_user_stamp: SimTime,
) -> TransformString {
    let mut out = format!(
        "{PREFIX}{}|{}|",
        stamp.as_nanos(),
        origin_user_stamp.as_nanos()
    );
    for (i, &angle) in q.as_slice().iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        push_angle(&mut out, micro_radians(angle));
    }
    TransformString(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn fail<T>(&self, reason: &'static str) -> Result<T, ParseError> {
        Err(ParseError {
            offset: self.pos,
            reason,
        })
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn expect(&mut self, byte: u8, reason: &'static str) -> Result<(), ParseError> {
        if self.peek() == Some(byte) {
            self.pos += 1;
            Ok(())
        } else {
            self.fail(reason)
        }
    }

    /// Reads a run of ASCII digits with no redundant leading zero.
    fn digits(&mut self) -> Result<&[u8], ParseError> {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        let run = &self.bytes[start..self.pos];
        if run.is_empty() {
            self.pos = start;
            return self.fail("expected a digit");
        }
        if run.len() > 1 && run[0] == b'0' {
            self.pos = start;
            return self.fail("leading zero");
        }
        Ok(run)
    }

    fn stamp(&mut self) -> Result<SimTime, ParseError> {
        let start = self.pos;
        let run = self.digits()?;
        let text = std::str::from_utf8(run).expect("digits are ASCII");
        match text.parse::<u64>() {
            Ok(n) => Ok(SimTime::from_nanos(n)),
            Err(_) => Err(ParseError {
                offset: start,
                reason: "stamp does not fit in 64 bits",
            }),
        }
    }

    fn angle(&mut self) -> Result<f64, ParseError> {
        let start = self.pos;
        let negative = self.peek() == Some(b'-');
        if negative {
            self.pos += 1;
        }
        let whole_digits = self.digits()?;
        let whole: i64 = std::str::from_utf8(whole_digits)
            .expect("digits are ASCII")
            .parse()
            .or_else(|_| self.fail("angle out of range"))?;
        self.expect(b'.', "expected '.' in angle")?;
        let frac_start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        if self.pos - frac_start != 6 {
            self.pos = frac_start;
            return self.fail("angle needs exactly 6 fractional digits");
        }
        let frac: i64 = std::str::from_utf8(&self.bytes[frac_start..self.pos])
            .expect("digits are ASCII")
            .parse()
            .expect("six digits fit");
        let magnitude = whole
            .checked_mul(1_000_000)
            .and_then(|m| m.checked_add(frac))
            .ok_or(ParseError {
                offset: start,
                reason: "angle out of range",
            })?;
        if negative && magnitude == 0 {
            return Err(ParseError {
                offset: start,
                reason: "negative zero angle",
            });
        }
        let micros = if negative { -magnitude } else { magnitude };
        Ok(micros as f64 / MICRO)
    }
}

pub fn decode_transform_string(text: &str) -> Result<DecodedTransform, ParseError> {
    let mut cur = Cursor {
        bytes: text.as_bytes(),
        pos: 0,
    };
    if !text.starts_with(PREFIX) {
        return cur.fail("expected 'TS|' prefix");
    }
    cur.pos = PREFIX.len();
    let stamp = cur.stamp()?;
    cur.expect(b'|', "expected '|' after stamp")?;
    let origin_user_stamp = cur.stamp()?;
    cur.expect(b'|', "expected '|' after origin stamp")?;
    if cur.peek().is_none() {
        return cur.fail("empty joint list");
    }
    let mut angles = vec![cur.angle()?];
    while cur.peek().is_some() {
        cur.expect(b',', "expected ',' between angles")?;
        angles.push(cur.angle()?);
    }
    Ok(DecodedTransform {
        joints: JointVector::new(angles),
        stamp,
        origin_user_stamp,
    })
}

impl std::str::FromStr for TransformString {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        decode_transform_string(s)?;
        Ok(TransformString(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(n: u64) -> SimTime {
        SimTime::from_nanos(n)
    }

    #[test]
    fn encodes_examples() {
        let zeros = encode_transform_string(&JointVector::zeros(2), t(1000), t(500));
        assert_eq!(zeros.as_str(), "TS|1000|500|0.000000,0.000000");
        let q = JointVector::new(vec![std::f64::consts::FRAC_PI_2, -0.5]);
        let s = encode_transform_string(&q, t(2_000_000), t(1_500_000));
        assert_eq!(s.as_str(), "TS|2000000|1500000|1.570796,-0.500000");
    }

    #[test]
    fn tiny_negative_angle_is_zero() {
        let q = JointVector::new(vec![-1e-9]);
        assert_eq!(
            encode_transform_string(&q, t(0), t(0)).as_str(),
            "TS|0|0|0.000000"
        );
    }

    #[test]
    fn decodes_example() {
        let d = decode_transform_string("TS|1000|500|0.000000,0.000000").unwrap();
        assert_eq!(d.joints, JointVector::zeros(2));
        assert_eq!((d.stamp, d.origin_user_stamp), (t(1000), t(500)));
    }

    #[test]
    fn rejects_malformed() {
        let cases = [
            ("TS|1|2|", 7),
            ("TX|1|2|0.000000", 0),
            ("TS|01|2|0.000000", 3),
            ("TS|1|2|0.00000", 9),
            ("TS|1|2|0.0000000", 9),
            ("TS|1|2|+1.000000", 7),
            ("TS|1|2| 1.000000", 7),
            ("TS|1|2|-0.000000", 7),
            ("TS|1|2|1.000000,", 16),
            ("TS|1|2|1.000000;2.000000", 15),
            ("TS|1|2|00.500000", 7),
            ("TS||2|0.000000", 3),
            ("TS|1|2|1.000000 ", 15),
        ];
        for (text, offset) in cases {
            let err = decode_transform_string(text).unwrap_err();
            assert_eq!(err.offset, offset, "{text}: {err}");
        }
    }

    proptest! {
        #[test]
        fn quantized_round_trip(
            micros in proptest::collection::vec(-10_000_000i64..10_000_000, 1..8),
            stamp in any::<u64>(),
            origin in any::<u64>(),
        ) {
            let q = JointVector::new(micros.iter().map(|&m| m as f64 / 1e6).collect());
            let s = encode_transform_string(&q, t(stamp), t(origin));
            let d = decode_transform_string(s.as_str()).unwrap();
            prop_assert_eq!(&d.joints, &q);
            prop_assert_eq!(d.stamp, t(stamp));
            prop_assert_eq!(d.origin_user_stamp, t(origin));
            prop_assert_eq!(encode_transform_string(&d.joints, d.stamp, d.origin_user_stamp), s);
        }

        #[test]
        fn arbitrary_angles_within_quantum(angles in proptest::collection::vec(-7.0f64..7.0, 1..8)) {
            let q = JointVector::new(angles.clone());
            let d = decode_transform_string(encode_transform_string(&q, t(1), t(1)).as_str()).unwrap();
            for (a, b) in angles.iter().zip(d.joints.as_slice()) {
                prop_assert!((a - b).abs() <= 5e-7 + 1e-12);
            }
        }

        #[test]
        fn decoder_never_panics(s in "TS\\|[0-9|,.\\-]{0,40}") {
            let _ = decode_transform_string(&s);
        }
    }
}
