//! Canonical JSON: compact, struct fields in declaration order, map keys
//! sorted (callers use `BTreeMap`), and every real written with 17
//! significant digits so it parses back to the identical bit pattern.

use std::io;

use serde::Serialize;
use serde_json::ser::Formatter;

use crate::error::{ArlError, Result};

struct Canonical;

impl Formatter for Canonical {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.write_f64(writer, f64::from(value))
    }
}

/// Serializes `value` to canonical JSON on one line.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Canonical);
    value.serialize(&mut ser).map_err(|e| ArlError::Checkpoint(e.to_string()))?;
    String::from_utf8(out).map_err(|e| ArlError::Checkpoint(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reals_carry_seventeen_digits() {
        assert_eq!(to_canonical_json(&0.1).unwrap(), "1.0000000000000001e-1");
        assert_eq!(to_canonical_json(&vec![1.0, -2.5]).unwrap(), "[1.0000000000000000e0,-2.5000000000000000e0]");
    }

    proptest! {
        #[test]
        fn reals_round_trip_bitwise(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(v.is_finite());
            let text = to_canonical_json(&v).unwrap();
            let back: f64 = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(back.to_bits(), v.to_bits());
            prop_assert_eq!(to_canonical_json(&back).unwrap(), text);
        }
    }
}
