//! Signed fixed-point arithmetic in configurable `Fix_T_F` formats.
//!
//! A value is a raw two's-complement integer of `T` bits carrying `F`
//! fractional bits, so its real value is `raw * 2^-F`. Every operation works
//! on the raw integer and then clamps to the format range; nothing wraps.
//! Rounding is round-to-nearest, ties to even.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A signed `Fix_T_F` format: `total_bits` including the sign, `frac_bits`
/// after the binary point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FxFormat {
    total_bits: u8,
    frac_bits: u8,
}

impl FxFormat {
    /// Membrane accumulator format.
    pub const FIX_18_12: FxFormat = FxFormat {
        total_bits: 18,
        frac_bits: 12,
    };
    /// Synaptic weight format.
    pub const FIX_4_3: FxFormat = FxFormat {
        total_bits: 4,
        frac_bits: 3,
    };

    pub fn new(total_bits: u8, frac_bits: u8) -> Result<Self> {
        if !(2..=32).contains(&total_bits) || frac_bits >= total_bits {
            return Err(Error::Format(format!(
                "Fix_{total_bits}_{frac_bits}: need 2 <= total <= 32 and frac < total"
            )));
        }
        Ok(FxFormat {
            total_bits,
            frac_bits,
        })
    }

    pub fn total_bits(self) -> u8 {
        self.total_bits
    }

    pub fn frac_bits(self) -> u8 {
        self.frac_bits
    }

    pub fn min_raw(self) -> i64 {
        -(1i64 << (self.total_bits - 1))
    }

    pub fn max_raw(self) -> i64 {
        (1i64 << (self.total_bits - 1)) - 1
    }

    /// Grid step `2^-frac_bits`.
    pub fn quantum(self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    pub fn min_value(self) -> f64 {
        self.min_raw() as f64 * self.quantum()
    }

    pub fn max_value(self) -> f64 {
        self.max_raw() as f64 * self.quantum()
    }

    fn clamp(self, raw: i128) -> (i64, bool) {
        if raw > self.max_raw() as i128 {
            (self.max_raw(), true)
        } else if raw < self.min_raw() as i128 {
            (self.min_raw(), true)
        } else {
            (raw as i64, false)
        }
    }
}

impl fmt::Display for FxFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fix_{}_{}", self.total_bits, self.frac_bits)
    }
}

impl FromStr for FxFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("expected \"Fix_T_F\", got {s:?}"));
        let rest = s.strip_prefix("Fix_").ok_or_else(bad)?;
        let (t, f) = rest.split_once('_').ok_or_else(bad)?;
        let t: u8 = t.parse().map_err(|_| bad())?;
        let f: u8 = f.parse().map_err(|_| bad())?;
        FxFormat::new(t, f)
    }
}

impl Serialize for FxFormat {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FxFormat {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// What `quantize` does with an input outside the format range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Overflow {
    Saturate,
    Error,
}

/// Divide `n` by `2^shift`, rounding to nearest with ties to even.
pub(crate) fn round_shift_even(n: i128, shift: u32) -> i128 {
    if shift == 0 {
        return n;
    }
    let q = n >> shift;
    let rem = n - (q << shift);
    let half = 1i128 << (shift - 1);
    if rem > half || (rem == half && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

/// A fixed-point number: raw bit pattern plus its format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FxValue {
    raw: i64,
    fmt: FxFormat,
}

impl FxValue {
    pub fn zero(fmt: FxFormat) -> Self {
        FxValue { raw: 0, fmt }
    }

    /// Largest representable value.
    pub fn max(fmt: FxFormat) -> Self {
        FxValue {
            raw: fmt.max_raw(),
            fmt,
        }
    }

    /// Most negative representable value.
    pub fn min(fmt: FxFormat) -> Self {
        FxValue {
            raw: fmt.min_raw(),
            fmt,
        }
    }

    pub fn from_raw(raw: i64, fmt: FxFormat) -> Result<Self> {
        if raw < fmt.min_raw() || raw > fmt.max_raw() {
            return Err(Error::Range {
                value: raw as f64 * fmt.quantum(),
                format: fmt.to_string(),
            });
        }
        Ok(FxValue { raw, fmt })
    }

    /// Round `x` onto the grid of `fmt`.
    pub fn quantize(x: f64, fmt: FxFormat, policy: Overflow) -> Result<Self> {
        if !x.is_finite() {
            return Err(Error::Range {
                value: x,
                format: fmt.to_string(),
            });
        }
        // Scaling by a power of two is exact in binary floating point.
        let scaled = (x * (fmt.frac_bits as f64).exp2()).round_ties_even();
        if scaled > fmt.max_raw() as f64 || scaled < fmt.min_raw() as f64 {
            return match policy {
                Overflow::Saturate if scaled > 0.0 => Ok(Self::max(fmt)),
                Overflow::Saturate => Ok(Self::min(fmt)),
                Overflow::Error => Err(Error::Range {
                    value: x,
                    format: fmt.to_string(),
                }),
            };
        }
        Ok(FxValue {
            raw: scaled as i64,
            fmt,
        })
    }

    /// Saturating quantization; the form used for configuration constants.
    pub fn saturate(x: f64, fmt: FxFormat) -> Self {
        Self::quantize(x, fmt, Overflow::Saturate).unwrap_or_else(|_| Self::zero(fmt))
    }

    pub fn raw(self) -> i64 {
        self.raw
    }

    pub fn format(self) -> FxFormat {
        self.fmt
    }

    pub fn to_f64(self) -> f64 {
        self.raw as f64 * self.fmt.quantum()
    }

    pub fn is_zero(self) -> bool {
        self.raw == 0
    }

    pub fn signum(self) -> i64 {
        self.raw.signum()
    }

    pub fn abs(self) -> Self {
        self.neg().max_with(self)
    }

    fn max_with(self, other: Self) -> Self {
        if other.raw > self.raw {
            other
        } else {
            self
        }
    }

    fn same_format(self, rhs: Self) {
        assert_eq!(
            self.fmt, rhs.fmt,
            "fixed-point operands must share a format"
        );
    }

    /// Saturating add; the flag reports whether the result was clamped.
    pub fn add_flagged(self, rhs: Self) -> (Self, bool) {
        self.same_format(rhs);
        let (raw, sat) = self.fmt.clamp(self.raw as i128 + rhs.raw as i128);
        (FxValue { raw, fmt: self.fmt }, sat)
    }

    pub fn sub_flagged(self, rhs: Self) -> (Self, bool) {
        self.same_format(rhs);
        let (raw, sat) = self.fmt.clamp(self.raw as i128 - rhs.raw as i128);
        (FxValue { raw, fmt: self.fmt }, sat)
    }

    pub fn add(self, rhs: Self) -> Self {
        self.add_flagged(rhs).0
    }

    pub fn sub(self, rhs: Self) -> Self {
        self.sub_flagged(rhs).0
    }

    /// Negation; the most negative value saturates to the maximum.
    #[allow(clippy::should_implement_trait)]
    pub fn neg(self) -> Self {
        let (raw, _) = self.fmt.clamp(-(self.raw as i128));
        FxValue { raw, fmt: self.fmt }
    }

    /// Arithmetic shift right: floor division of the raw value by `2^k`.
    pub fn shr(self, k: u32) -> Self {
        assert!(
            k < self.fmt.total_bits as u32,
            "shift {k} out of range for {}",
            self.fmt
        );
        FxValue {
            raw: self.raw >> k,
            fmt: self.fmt,
        }
    }

    /// Multiply by a constant `c`, re-quantizing the exact product into the
    /// format of `self`.
    pub fn mul_const_flagged(self, c: Self) -> (Self, bool) {
        let product = self.raw as i128 * c.raw as i128;
        let rounded = round_shift_even(product, c.fmt.frac_bits as u32);
        let (raw, sat) = self.fmt.clamp(rounded);
        (FxValue { raw, fmt: self.fmt }, sat)
    }

    pub fn mul_const(self, c: Self) -> Self {
        self.mul_const_flagged(c).0
    }

    /// Convert to another format, rounding when bits are dropped and
    /// saturating at the target range.
    pub fn convert(self, fmt: FxFormat) -> Self {
        let from = self.fmt.frac_bits as i32;
        let to = fmt.frac_bits as i32;
        let raw = self.raw as i128;
        let rescaled = if to >= from {
            raw << (to - from)
        } else {
            round_shift_even(raw, (from - to) as u32)
        };
        let (raw, _) = fmt.clamp(rescaled);
        FxValue { raw, fmt }
    }
}

impl PartialOrd for FxValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        if self.fmt == other.fmt {
            return Some(self.raw.cmp(&other.raw));
        }
        // Compare on a common grid.
        let shift = self.fmt.frac_bits.max(other.fmt.frac_bits);
        let a = (self.raw as i128) << (shift - self.fmt.frac_bits);
        let b = (other.raw as i128) << (shift - other.fmt.frac_bits);
        Some(a.cmp(&b))
    }
}

impl fmt::Display for FxValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const M: FxFormat = FxFormat::FIX_18_12;

    fn raw(r: i64) -> FxValue {
        FxValue::from_raw(r, M).unwrap()
    }

    #[test]
    fn format_range() {
        assert_eq!(M.min_raw(), -131072);
        assert_eq!(M.max_raw(), 131071);
        assert_eq!(M.min_value(), -32.0);
        assert_eq!(M.max_value(), 32.0 - 1.0 / 4096.0);
        let w = FxFormat::FIX_4_3;
        assert_eq!(w.min_value(), -1.0);
        assert_eq!(w.max_value(), 0.875);
    }

    #[test]
    fn format_parse_and_validate() {
        assert_eq!("Fix_18_12".parse::<FxFormat>().unwrap(), M);
        assert_eq!(FxFormat::FIX_4_3.to_string(), "Fix_4_3");
        assert!("Fix_4_4".parse::<FxFormat>().is_err());
        assert!("Fix_33_1".parse::<FxFormat>().is_err());
        assert!("Q4.3".parse::<FxFormat>().is_err());
        assert!(FxFormat::new(1, 0).is_err());
    }

    #[test]
    fn quantize_examples() {
        let th = FxValue::quantize(0.15, M, Overflow::Saturate).unwrap();
        assert_eq!(th.raw(), 614);
        assert!((th.to_f64() - 0.149_902_343_75).abs() < 1e-15);
        assert_eq!(FxValue::quantize(0.0, M, Overflow::Error).unwrap().raw(), 0);
        assert_eq!(
            FxValue::quantize(0.0, FxFormat::FIX_4_3, Overflow::Error)
                .unwrap()
                .raw(),
            0
        );
        let r = FxValue::quantize(0.001, M, Overflow::Saturate).unwrap();
        assert_eq!(r.raw(), 4);
        assert_eq!(r.to_f64(), 0.0009765625);
    }

    #[test]
    fn quantize_ties_to_even() {
        // 0.5 and 1.5 quanta
        let q = M.quantum();
        assert_eq!(
            FxValue::quantize(0.5 * q, M, Overflow::Error)
                .unwrap()
                .raw(),
            0
        );
        assert_eq!(
            FxValue::quantize(1.5 * q, M, Overflow::Error)
                .unwrap()
                .raw(),
            2
        );
        assert_eq!(
            FxValue::quantize(-2.5 * q, M, Overflow::Error)
                .unwrap()
                .raw(),
            -2
        );
    }

    #[test]
    fn quantize_out_of_range() {
        assert!(matches!(
            FxValue::quantize(40.0, M, Overflow::Error),
            Err(Error::Range { .. })
        ));
        assert_eq!(
            FxValue::quantize(40.0, M, Overflow::Saturate).unwrap(),
            FxValue::max(M)
        );
        assert_eq!(
            FxValue::quantize(-40.0, M, Overflow::Saturate).unwrap(),
            FxValue::min(M)
        );
        assert!(FxValue::quantize(f64::NAN, M, Overflow::Saturate).is_err());
    }

    #[test]
    fn add_examples() {
        assert_eq!(raw(614).add(raw(4)).raw(), 618);
        let (s, flag) = FxValue::max(M).add_flagged(FxValue::max(M));
        assert_eq!(s, FxValue::max(M));
        assert!(flag);
        assert_eq!(raw(-4096).add(raw(4096)).raw(), 0);
        let (d, flag) = FxValue::min(M).sub_flagged(raw(1));
        assert_eq!(d, FxValue::min(M));
        assert!(flag);
        assert_eq!(FxValue::min(M).neg(), FxValue::max(M));
    }

    #[test]
    fn shr_examples() {
        let one = FxValue::quantize(1.0, M, Overflow::Error).unwrap();
        assert_eq!(one.shr(3).to_f64(), 0.125);
        assert_eq!(raw(0).shr(5).raw(), 0);
        // floor(-1 / 8) = -1
        assert_eq!(raw(-1).shr(3).raw(), (-1i64).div_euclid(8));
        assert_eq!(raw(-1).shr(3).raw(), -1);
    }

    #[test]
    fn mul_const_examples() {
        let one = FxValue::quantize(1.0, M, Overflow::Error).unwrap();
        let c = FxValue::quantize(-0.11, M, Overflow::Error).unwrap();
        assert_eq!(c.raw(), -451);
        // 4096 * -451 / 4096 is exact
        let p = one.mul_const(c);
        assert_eq!(p.raw(), -451);
        assert_eq!(p.to_f64(), -0.110107421875);
        assert_eq!(raw(1234).mul_const(FxValue::zero(M)).raw(), 0);
        assert_eq!(raw(-777).mul_const(one).raw(), -777);
        // 3 * -451 = -1353; -1353/4096 = -0.33 -> 0
        assert_eq!(raw(3).mul_const(c).raw(), 0);
        // 10 * -451 = -4510; /4096 = -1.101 -> -1
        assert_eq!(raw(10).mul_const(c).raw(), -1);
    }

    #[test]
    fn convert_widens_exactly() {
        let w = FxValue::from_raw(-3, FxFormat::FIX_4_3).unwrap();
        let wide = w.convert(M);
        assert_eq!(wide.to_f64(), -0.375);
        assert_eq!(wide.raw(), -1536);
        assert_eq!(wide.convert(FxFormat::FIX_4_3), w);
    }

    #[test]
    fn cross_format_ordering() {
        let a = FxValue::from_raw(1, FxFormat::FIX_4_3).unwrap();
        let b = raw(511);
        let c = raw(512);
        assert!(b < a);
        assert_eq!(a.partial_cmp(&c), Some(Ordering::Equal));
    }

    fn any_format() -> impl Strategy<Value = FxFormat> {
        (2u8..=32)
            .prop_flat_map(|t| (Just(t), 0..t))
            .prop_map(|(t, f)| FxFormat::new(t, f).unwrap())
    }

    proptest! {
        #[test]
        fn quantize_round_trips_raw(fmt in any_format(), seed in any::<u64>()) {
            let span = (fmt.max_raw() - fmt.min_raw()) as u64 + 1;
            let r = fmt.min_raw() + (seed % span) as i64;
            let v = FxValue::from_raw(r, fmt).unwrap();
            prop_assert_eq!(FxValue::quantize(v.to_f64(), fmt, Overflow::Error).unwrap().raw(), r);
        }

        #[test]
        fn quantize_is_monotone(x in -40.0f64..40.0, dx in 0.0f64..10.0) {
            let a = FxValue::quantize(x, M, Overflow::Saturate).unwrap();
            let b = FxValue::quantize(x + dx, M, Overflow::Saturate).unwrap();
            prop_assert!(a.raw() <= b.raw());
        }

        #[test]
        fn quantize_error_within_half_quantum(x in -31.9f64..31.9) {
            let q = FxValue::quantize(x, M, Overflow::Error).unwrap();
            prop_assert!((q.to_f64() - x).abs() <= M.quantum() / 2.0);
        }

        #[test]
        fn shr_composes(r in -131072i64..=131071, j in 0u32..8, k in 0u32..8) {
            let v = raw(r);
            prop_assert_eq!(v.shr(j).shr(k), v.shr(j + k));
            prop_assert_eq!(v.shr(k).raw(), r.div_euclid(1 << k));
        }
    }
}
