// SPDX-License-Identifier: Apache-2.0

//! Exact two's-complement fixed-point arithmetic.
//!
//! A [`FixedSpec`] describes a format `fixed<W,I>`: `W` total bits, `I`
//! integer bits (sign included when signed), `F = W - I` fraction bits. A
//! [`Fixed`] stores the raw integer; its real value is `raw * 2^-F`.
//!
//! All conversions go through [`requantize`], which takes an exact dyadic
//! value `mant * 2^-frac` held in an `i128` and applies the target rounding
//! and overflow mode exactly once. Multiplication never rounds: the product
//! of two 64-bit raws always fits in 128 bits.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const MAX_WIDTH: u32 = 64;
/// Unsigned raws live in an `i64`, so one bit less is available.
pub const MAX_UNSIGNED_WIDTH: u32 = 63;
const INTEGER_BITS_LIMIT: i32 = 256;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FixedError {
    #[error("width {0} out of range 1..={MAX_WIDTH}")]
    InvalidWidth(u32),
    #[error("unsigned width {0} exceeds {MAX_UNSIGNED_WIDTH}")]
    InvalidUnsignedWidth(u32),
    #[error("integer bits {0} out of range")]
    InvalidIntegerBits(i32),
    #[error("raw value {raw} does not fit {spec}")]
    RawOutOfRange { raw: i128, spec: FixedSpec },
    #[error("cannot parse precision `{text}`: {reason}")]
    Parse { text: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Rounding {
    /// Round toward negative infinity (drop fraction bits).
    #[default]
    Truncate,
    /// Round to nearest, ties toward positive infinity.
    RoundHalfUp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Overflow {
    /// Modular reduction into `W` bits.
    #[default]
    Wrap,
    /// Clamp to the representable extremes.
    Saturate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FixedSpec {
    width: u32,
    integer: i32,
    signed: bool,
    rounding: Rounding,
    overflow: Overflow,
}

impl FixedSpec {
    /// Signed format with truncation and wrap-around.
    pub fn new(width: u32, integer: i32) -> Result<Self, FixedError> {
        Self::with_modes(width, integer, true, Rounding::Truncate, Overflow::Wrap)
    }

    pub fn with_modes(
        width: u32,
        integer: i32,
        signed: bool,
        rounding: Rounding,
        overflow: Overflow,
    ) -> Result<Self, FixedError> {
        if !(1..=MAX_WIDTH).contains(&width) {
            return Err(FixedError::InvalidWidth(width));
        }
        if !signed && width > MAX_UNSIGNED_WIDTH {
            return Err(FixedError::InvalidUnsignedWidth(width));
        }
        if !(-INTEGER_BITS_LIMIT..=INTEGER_BITS_LIMIT).contains(&integer) {
            return Err(FixedError::InvalidIntegerBits(integer));
        }
        Ok(Self {
            width,
            integer,
            signed,
            rounding,
            overflow,
        })
    }

    pub fn rounding_mode(self, rounding: Rounding) -> Self {
        Self { rounding, ..self }
    }

    pub fn overflow_mode(self, overflow: Overflow) -> Self {
        Self { overflow, ..self }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn integer_bits(&self) -> i32 {
        self.integer
    }

    pub fn frac_bits(&self) -> i32 {
        self.width as i32 - self.integer
    }

    pub fn is_signed(&self) -> bool {
        self.signed
    }

    pub fn rounding(&self) -> Rounding {
        self.rounding
    }

    pub fn overflow(&self) -> Overflow {
        self.overflow
    }

    pub fn min_raw(&self) -> i64 {
        if self.signed {
            (-(1i128 << (self.width - 1))) as i64
        } else {
            0
        }
    }

    pub fn max_raw(&self) -> i64 {
        if self.signed {
            ((1i128 << (self.width - 1)) - 1) as i64
        } else {
            ((1i128 << self.width) - 1) as i64
        }
    }

    /// Weight of one least-significant bit, `2^-F`.
    pub fn ulp(&self) -> f64 {
        pow2(-self.frac_bits())
    }

    pub fn max_value(&self) -> f64 {
        Exact::new(self.max_raw() as i128, self.frac_bits()).to_f64()
    }

    pub fn min_value(&self) -> f64 {
        Exact::new(self.min_raw() as i128, self.frac_bits()).to_f64()
    }

    /// Exclusive upper bound of the range: `2^(I-1)` signed, `2^I` unsigned.
    pub fn range_upper(&self) -> f64 {
        if self.signed {
            pow2(self.integer - 1)
        } else {
            pow2(self.integer)
        }
    }

    pub fn contains_raw(&self, raw: i128) -> bool {
        raw >= self.min_raw() as i128 && raw <= self.max_raw() as i128
    }

    /// Applies this spec's overflow mode to an integer already on this
    /// spec's fraction grid.
    fn fit(&self, v: i128) -> i64 {
        if self.contains_raw(v) {
            return v as i64;
        }
        match self.overflow {
            Overflow::Saturate => {
                if v < 0 {
                    self.min_raw()
                } else {
                    self.max_raw()
                }
            }
            Overflow::Wrap => self.wrap_low_bits(v as u128),
        }
    }

    /// Interprets the low `W` bits of `low` under this spec's signedness.
    fn wrap_low_bits(&self, low: u128) -> i64 {
        let mask = (1u128 << self.width) - 1;
        let bits = low & mask;
        if self.signed && bits >> (self.width - 1) & 1 == 1 {
            (bits as i128 - (1i128 << self.width)) as i64
        } else {
            bits as i64
        }
    }
}

impl Default for FixedSpec {
    /// `fixed<16,6>`
    fn default() -> Self {
        Self {
            width: 16,
            integer: 6,
            signed: true,
            rounding: Rounding::Truncate,
            overflow: Overflow::Wrap,
        }
    }
}

impl fmt::Display for FixedSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "fixed<{},{}", self.width, self.integer)?;
        if !self.signed {
            f.write_str(",u")?;
        }
        if self.rounding == Rounding::RoundHalfUp {
            f.write_str(",rnd")?;
        }
        if self.overflow == Overflow::Saturate {
            f.write_str(",sat")?;
        }
        f.write_str(">")
    }
}

impl FromStr for FixedSpec {
    type Err = FixedError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let fail = |reason: &str| FixedError::Parse {
            text: text.to_string(),
            reason: reason.to_string(),
        };
        let body = text
            .trim()
            .strip_prefix("fixed<")
            .and_then(|s| s.strip_suffix('>'))
            .ok_or_else(|| fail("expected fixed<W,I[,u][,rnd][,sat]>"))?;
        let mut parts = body.split(',').map(str::trim);
        let width: u32 = parts
            .next()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| fail("missing width"))?
            .parse()
            .map_err(|_| fail("width is not an integer"))?;
        let integer: i32 = parts
            .next()
            .ok_or_else(|| fail("missing integer bits"))?
            .parse()
            .map_err(|_| fail("integer bits is not an integer"))?;

        let (mut signed, mut rounding, mut overflow) = (None, None, None);
        for opt in parts {
            let slot_taken = match opt {
                "s" | "u" => signed.replace(opt == "s").is_some(),
                "trn" | "rnd" => rounding
                    .replace(if opt == "rnd" {
                        Rounding::RoundHalfUp
                    } else {
                        Rounding::Truncate
                    })
                    .is_some(),
                "wrap" | "sat" => overflow
                    .replace(if opt == "sat" {
                        Overflow::Saturate
                    } else {
                        Overflow::Wrap
                    })
                    .is_some(),
                other => return Err(fail(&format!("unknown option `{other}`"))),
            };
            if slot_taken {
                return Err(fail(&format!("conflicting option `{opt}`")));
            }
        }
        Self::with_modes(
            width,
            integer,
            signed.unwrap_or(true),
            rounding.unwrap_or_default(),
            overflow.unwrap_or_default(),
        )
        .map_err(|e| fail(&e.to_string()))
    }
}

impl Serialize for FixedSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FixedSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Exact dyadic rational `mant * 2^-frac`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Exact {
    pub mant: i128,
    pub frac: i32,
}

impl Exact {
    pub const ZERO: Exact = Exact { mant: 0, frac: 0 };

    pub fn new(mant: i128, frac: i32) -> Self {
        Self { mant, frac }
    }

    /// Lossless decomposition of a finite double. Returns `None` for NaN or
    /// infinities.
    pub fn from_f64(x: f64) -> Option<Self> {
        if !x.is_finite() {
            return None;
        }
        if x == 0.0 {
            return Some(Self::ZERO);
        }
        let bits = x.to_bits();
        let biased = ((bits >> 52) & 0x7ff) as i32;
        let fraction = (bits & ((1u64 << 52) - 1)) as i128;
        let (mag, exp) = if biased == 0 {
            (fraction, -1074)
        } else {
            (fraction | (1i128 << 52), biased - 1075)
        };
        let mant = if x < 0.0 { -mag } else { mag };
        Some(Self { mant, frac: -exp })
    }

    /// Nearest double (the mantissa conversion is correctly rounded).
    pub fn to_f64(&self) -> f64 {
        let m = self.mant as f64;
        // Split the scaling so intermediate powers stay normal.
        let half = self.frac / 2;
        m * pow2(-half) * pow2(-(self.frac - half))
    }

    pub fn is_zero(&self) -> bool {
        self.mant == 0
    }

    /// Exact sum, `None` if the aligned mantissas leave `i128`.
    pub fn checked_add(self, other: Exact) -> Option<Exact> {
        let frac = self.frac.max(other.frac);
        let a = shl_checked(self.mant, (frac - self.frac) as u32)?;
        let b = shl_checked(other.mant, (frac - other.frac) as u32)?;
        Some(Exact {
            mant: a.checked_add(b)?,
            frac,
        })
    }

    pub fn checked_mul(self, other: Exact) -> Option<Exact> {
        Some(Exact {
            mant: self.mant.checked_mul(other.mant)?,
            frac: self.frac.checked_add(other.frac)?,
        })
    }

    /// Position of the most significant bit relative to the binary point.
    fn msb_exponent(&self) -> i64 {
        let len = 128 - self.mant.unsigned_abs().leading_zeros() as i64;
        len - self.frac as i64
    }
}

impl PartialOrd for Exact {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Exact {
    fn cmp(&self, other: &Self) -> Ordering {
        let sa = self.mant.signum();
        let sb = other.mant.signum();
        if sa != sb || sa == 0 {
            return sa.cmp(&sb);
        }
        let mag = match self.msb_exponent().cmp(&other.msb_exponent()) {
            Ordering::Equal => {
                // Same magnitude scale: aligning costs at most 127 bits.
                let frac = self.frac.max(other.frac);
                let a = self.mant.unsigned_abs() << (frac - self.frac) as u32;
                let b = other.mant.unsigned_abs() << (frac - other.frac) as u32;
                a.cmp(&b)
            }
            ord => ord,
        };
        if sa < 0 {
            mag.reverse()
        } else {
            mag
        }
    }
}

fn shl_checked(v: i128, shift: u32) -> Option<i128> {
    if v == 0 {
        return Some(0);
    }
    let len = 128 - v.unsigned_abs().leading_zeros();
    if len + shift > 126 {
        None
    } else {
        Some(v << shift)
    }
}

/// Exact power of two for any exponent a double can express (0 or inf
/// outside that).
pub fn pow2(e: i32) -> f64 {
    if e > 1023 {
        f64::INFINITY
    } else if e >= -1022 {
        f64::from_bits(((e + 1023) as u64) << 52)
    } else if e >= -1074 {
        f64::from_bits(1u64 << (e + 1074))
    } else {
        0.0
    }
}

/// A value in a concrete fixed-point format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fixed {
    raw: i64,
    spec: FixedSpec,
}

impl Fixed {
    pub fn from_raw(raw: i64, spec: FixedSpec) -> Result<Self, FixedError> {
        if spec.contains_raw(raw as i128) {
            Ok(Self { raw, spec })
        } else {
            Err(FixedError::RawOutOfRange {
                raw: raw as i128,
                spec,
            })
        }
    }

    pub fn zero(spec: FixedSpec) -> Self {
        Self { raw: 0, spec }
    }

    pub fn raw(&self) -> i64 {
        self.raw
    }

    pub fn spec(&self) -> FixedSpec {
        self.spec
    }

    pub fn exact(&self) -> Exact {
        Exact::new(self.raw as i128, self.spec.frac_bits())
    }

    pub fn to_f64(&self) -> f64 {
        self.exact().to_f64()
    }
}

impl fmt::Display for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} @ {})", self.to_f64(), self.raw, self.spec)
    }
}

/// Rounds and fits the exact value `mant * 2^-frac` into `spec`.
pub fn requantize(mant: i128, frac: i32, spec: FixedSpec) -> Fixed {
    let shift = spec.frac_bits() as i64 - frac as i64;
    let raw = if shift >= 0 {
        shift_left_fit(mant, shift as u64, spec)
    } else {
        let v = shift_right_round(mant, (-shift) as u64, spec.rounding);
        spec.fit(v)
    };
    Fixed { raw, spec }
}

fn shift_left_fit(mant: i128, shift: u64, spec: FixedSpec) -> i64 {
    if mant == 0 {
        return 0;
    }
    let len = 128 - mant.unsigned_abs().leading_zeros() as u64;
    if len + shift <= 126 {
        return spec.fit(mant << shift);
    }
    // Far outside any 64-bit range.
    match spec.overflow {
        Overflow::Saturate => {
            if mant < 0 {
                spec.min_raw()
            } else {
                spec.max_raw()
            }
        }
        Overflow::Wrap => {
            let low = if shift >= 128 {
                0
            } else {
                (mant as u128) << shift
            };
            spec.wrap_low_bits(low)
        }
    }
}

fn shift_right_round(mant: i128, shift: u64, rounding: Rounding) -> i128 {
    match rounding {
        Rounding::Truncate => {
            if shift >= 127 {
                if mant < 0 {
                    -1
                } else {
                    0
                }
            } else {
                mant >> shift
            }
        }
        Rounding::RoundHalfUp => {
            if shift >= 128 {
                0
            } else {
                // floor((floor(m / 2^(s-1)) + 1) / 2) == floor(m / 2^s + 1/2)
                let q = mant >> (shift - 1);
                q.saturating_add(1) >> 1
            }
        }
    }
}

/// Quantizes a real into `spec`. NaN maps to zero and infinities to the
/// range extremes.
pub fn quantize(x: f64, spec: FixedSpec) -> Fixed {
    match Exact::from_f64(x) {
        Some(e) => requantize(e.mant, e.frac, spec),
        None if x.is_nan() => Fixed::zero(spec),
        None => {
            let raw = if x > 0.0 {
                spec.max_raw()
            } else {
                spec.min_raw()
            };
            Fixed { raw, spec }
        }
    }
}

pub fn cast(v: Fixed, spec: FixedSpec) -> Fixed {
    requantize(v.raw as i128, v.spec.frac_bits(), spec)
}

pub fn cast_exact(v: Exact, spec: FixedSpec) -> Fixed {
    requantize(v.mant, v.frac, spec)
}

/// Full-precision product: width `a.W + b.W`, fraction `a.F + b.F`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Product {
    pub raw: i128,
    pub width: u32,
    pub frac: i32,
}

impl Product {
    pub fn exact(&self) -> Exact {
        Exact::new(self.raw, self.frac)
    }

    pub fn to_f64(&self) -> f64 {
        self.exact().to_f64()
    }
}

pub fn mul(a: Fixed, b: Fixed) -> Product {
    Product {
        raw: a.raw as i128 * b.raw as i128,
        width: a.spec.width + b.spec.width,
        frac: a.spec.frac_bits() + b.spec.frac_bits(),
    }
}

/// Exact sum of two values; the caller casts once at the end of a
/// reduction.
pub fn add(a: Fixed, b: Fixed) -> Exact {
    a.exact()
        .checked_add(b.exact())
        .expect("sum of two 64-bit fixed values with fraction gap > 60 bits")
}

/// Running sum held in an accumulator format.
///
/// Every term is first cast into the accumulator spec, then added; the sum
/// is fitted back into the accumulator (only the overflow mode can act,
/// both operands share the fraction grid).
#[derive(Debug, Clone, Copy)]
pub struct Accumulator {
    raw: i64,
    spec: FixedSpec,
}

impl Accumulator {
    pub fn new(spec: FixedSpec) -> Self {
        Self { raw: 0, spec }
    }

    pub fn starting_at(init: Fixed, spec: FixedSpec) -> Self {
        Self {
            raw: cast(init, spec).raw,
            spec,
        }
    }

    pub fn add_exact(&mut self, term: Exact) {
        let t = cast_exact(term, self.spec);
        self.raw = self.spec.fit(self.raw as i128 + t.raw as i128);
    }

    pub fn add_product(&mut self, p: &Product) {
        self.add_exact(p.exact());
    }

    pub fn value(&self) -> Fixed {
        Fixed {
            raw: self.raw,
            spec: self.spec,
        }
    }

    pub fn finish(self, result: FixedSpec) -> Fixed {
        cast(self.value(), result)
    }
}

/// Product of two ±1 values given their bit encodings (`0` stands for -1).
pub fn xnor_product(a: bool, b: bool) -> bool {
    !(a ^ b)
}

pub fn encode_binary(v: i8) -> bool {
    v >= 0
}

pub fn decode_binary(bit: bool) -> i8 {
    if bit {
        1
    } else {
        -1
    }
}
