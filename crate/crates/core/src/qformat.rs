//! Q16.16 fixed-point samples and the wide accumulator they feed.
//!
//! [`QNum`] is the 32-bit operand format every multiplier consumes: 16 integer
//! bits, 16 fractional bits, two's complement. [`QAcc`] is the lossless
//! accumulator: the exact product of two `QNum`s always fits, and additions are
//! exact integer additions, so dot products are associative and
//! order-independent by construction. All narrowing truncates toward negative
//! infinity; integer overflow saturates and is counted, never wrapped.

use std::fmt;
use thiserror::Error;

/// Fractional bits of the operand format.
pub const Q_FRAC_BITS: u32 = 16;

/// Fractional bits carried by the accumulator.
///
/// An exact `QNum x QNum` product needs 32 fractional bits; the accumulator
/// keeps 32 more below that so a product scaled by a dyadic factor (the
/// constant-error injection multiplier) stays exact, and 32 integer bits above
/// Q32.32 so that far more than 2^15 worst-case products can be summed without
/// overflow.
pub const ACC_FRAC_BITS: u32 = 64;

const NARROW_SHIFT: u32 = ACC_FRAC_BITS - Q_FRAC_BITS;

/// Errors raised by the fixed-point substrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ArithError {
    /// `i32::MIN` has no positive magnitude in two's complement; the caller
    /// must saturate before sign/magnitude decomposition.
    #[error("most negative Q16.16 value has no magnitude")]
    MostNegative,
    /// The accumulator guard bits were exhausted.
    #[error("accumulator overflow")]
    AccOverflow,
}

/// A Q16.16 fixed-point sample: `value = raw / 2^16`.
///
/// Representable range is `[-32768, 32768 - 2^-16]`.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QNum {
    raw: i32,
}

/// Sign/magnitude decomposition of a [`QNum`].
///
/// `sign * mag` reconstructs the raw value exactly for every `QNum` except
/// `i32::MIN`, which is rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignMag {
    /// +1 or -1. Zero magnitudes carry sign +1.
    pub sign: i32,
    /// Raw magnitude, at most `2^31 - 1`.
    pub mag: u32,
}

impl QNum {
    pub const ZERO: QNum = QNum { raw: 0 };
    pub const ONE: QNum = QNum { raw: 1 << Q_FRAC_BITS };
    /// Largest representable value, `32768 - 2^-16`.
    pub const MAX: QNum = QNum { raw: i32::MAX };
    /// Most negative representable value, `-32768`.
    pub const MIN: QNum = QNum { raw: i32::MIN };

    #[inline]
    pub const fn from_raw(raw: i32) -> QNum {
        QNum { raw }
    }

    #[inline]
    pub const fn raw(self) -> i32 {
        self.raw
    }

    #[inline]
    pub const fn is_zero(self) -> bool {
        self.raw == 0
    }

    /// Quantizes a real value: truncation toward negative infinity (never
    /// round-to-nearest), saturating at the representable range.
    ///
    /// The input must be finite; non-finite values are rejected at ingestion
    /// before they can reach this point.
    #[inline]
    pub fn quantize(x: f64) -> QNum {
        debug_assert!(x.is_finite(), "quantize requires a finite input");
        let scaled = (x * (1u64 << Q_FRAC_BITS) as f64).floor();
        if scaled >= i32::MAX as f64 {
            QNum::MAX
        } else if scaled <= i32::MIN as f64 {
            QNum::MIN
        } else {
            QNum::from_raw(scaled as i32)
        }
    }

    /// Like [`QNum::quantize`], but bumps `saturations` when the value clamps.
    #[inline]
    pub fn quantize_counted(x: f64, saturations: &mut u64) -> QNum {
        debug_assert!(x.is_finite(), "quantize requires a finite input");
        let scaled = (x * (1u64 << Q_FRAC_BITS) as f64).floor();
        if scaled > i32::MAX as f64 {
            *saturations += 1;
            QNum::MAX
        } else if scaled < i32::MIN as f64 {
            *saturations += 1;
            QNum::MIN
        } else {
            QNum::from_raw(scaled as i32)
        }
    }

    /// Exact real value (`f64` holds all 31 significand bits).
    #[inline]
    pub fn to_real(self) -> f64 {
        self.raw as f64 / (1u64 << Q_FRAC_BITS) as f64
    }

    /// Sign/magnitude decomposition. Errors on `i32::MIN`, whose magnitude is
    /// not representable; callers are expected to saturate first.
    #[inline]
    pub fn split_sign(self) -> Result<SignMag, ArithError> {
        if self.raw == i32::MIN {
            return Err(ArithError::MostNegative);
        }
        Ok(SignMag {
            sign: if self.raw < 0 { -1 } else { 1 },
            mag: self.raw.unsigned_abs(),
        })
    }
}

impl SignMag {
    /// Inverse of [`QNum::split_sign`].
    #[inline]
    pub fn recompose(self) -> QNum {
        debug_assert!(self.mag <= i32::MAX as u32);
        let mag = self.mag as i32;
        QNum::from_raw(if self.sign < 0 { -mag } else { mag })
    }
}

impl fmt::Debug for QNum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "QNum({} = {})", self.raw, self.to_real())
    }
}

impl fmt::Display for QNum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_real())
    }
}

/// The wide accumulator: `value = raw / 2^64` over an `i128` raw.
///
/// Products of `QNum`s enter exactly (see [`QAcc::product`]), additions are
/// exact and therefore order-independent, and narrowing back to Q16.16
/// truncates toward negative infinity with counted saturation.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QAcc {
    raw: i128,
}

impl QAcc {
    pub const ZERO: QAcc = QAcc { raw: 0 };

    #[inline]
    pub const fn from_raw(raw: i128) -> QAcc {
        QAcc { raw }
    }

    #[inline]
    pub const fn raw(self) -> i128 {
        self.raw
    }

    #[inline]
    pub const fn is_zero(self) -> bool {
        self.raw == 0
    }

    /// The exact product of two samples. `raw_a * raw_b` is a Q32.32 integer
    /// of at most 62 bits, shifted up into the accumulator's resolution, so no
    /// information is lost.
    #[inline]
    pub fn product(a: QNum, b: QNum) -> QAcc {
        let p = a.raw() as i64 * b.raw() as i64;
        QAcc::from_raw((p as i128) << (ACC_FRAC_BITS - 2 * Q_FRAC_BITS))
    }

    /// Widens a sample without loss.
    #[inline]
    pub fn from_qnum(q: QNum) -> QAcc {
        QAcc::from_raw((q.raw() as i128) << NARROW_SHIFT)
    }

    /// Builds an accumulator value from a real number (floor at the
    /// accumulator resolution). Intended for tests and small constants; large
    /// magnitudes lose precision to the `f64` mantissa first.
    #[inline]
    pub fn from_real(x: f64) -> QAcc {
        debug_assert!(x.is_finite());
        QAcc::from_raw((x * 2f64.powi(ACC_FRAC_BITS as i32)).floor() as i128)
    }

    /// Exact addition. Associative and commutative: permuting summands cannot
    /// change the result. Errors if the guard bits are exhausted.
    #[inline]
    pub fn acc_add(self, rhs: QAcc) -> Result<QAcc, ArithError> {
        self.raw
            .checked_add(rhs.raw)
            .map(QAcc::from_raw)
            .ok_or(ArithError::AccOverflow)
    }

    /// Floor division by a positive integer, used by average pooling.
    #[inline]
    pub fn div_floor(self, n: u32) -> QAcc {
        debug_assert!(n > 0);
        QAcc::from_raw(self.raw.div_euclid(n as i128))
    }

    /// Real value; rounds once to `f64`.
    #[inline]
    pub fn to_real(self) -> f64 {
        self.raw as f64 / 2f64.powi(ACC_FRAC_BITS as i32)
    }

    /// Narrows to Q16.16: fractional bits below `2^-16` truncate toward
    /// negative infinity, integer overflow saturates and bumps `saturations`.
    #[inline]
    pub fn narrow(self, saturations: &mut u64) -> QNum {
        let shifted = self.raw >> NARROW_SHIFT; // arithmetic shift: floor
        if shifted > i32::MAX as i128 {
            *saturations += 1;
            QNum::MAX
        } else if shifted < i32::MIN as i128 {
            *saturations += 1;
            QNum::MIN
        } else {
            QNum::from_raw(shifted as i32)
        }
    }
}

impl fmt::Debug for QAcc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "QAcc({} = {})", self.raw, self.to_real())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quantize_examples() {
        assert_eq!(QNum::quantize(0.0).raw(), 0);
        assert_eq!(QNum::quantize(1.0).raw(), 65536);
        // Saturates against 2^31 - 1.
        assert_eq!(QNum::quantize(40000.0).raw(), 0x7FFF_FFFF);
        assert_eq!(QNum::quantize(-40000.0), QNum::MIN);
        // Truncation toward negative infinity, not rounding.
        assert_eq!(QNum::quantize(2f64.powi(-17)).raw(), 0);
        assert_eq!(QNum::quantize(-(2f64.powi(-17))).raw(), -1);
    }

    #[test]
    fn to_real_examples() {
        assert_eq!(QNum::from_raw(65536).to_real(), 1.0);
        assert_eq!(QNum::from_raw(1).to_real(), 2f64.powi(-16));
        assert_eq!(QNum::from_raw(-32768).to_real(), -0.5);
    }

    #[test]
    fn split_sign_examples() {
        assert_eq!(
            QNum::from_raw(65536).split_sign().unwrap(),
            SignMag { sign: 1, mag: 65536 }
        );
        assert_eq!(
            QNum::from_raw(-65536).split_sign().unwrap(),
            SignMag { sign: -1, mag: 65536 }
        );
        assert_eq!(QNum::MIN.split_sign(), Err(ArithError::MostNegative));
    }

    #[test]
    fn acc_add_examples() {
        let a = QAcc::from_raw(5);
        let b = QAcc::from_raw(7);
        assert_eq!(a.acc_add(b).unwrap().raw(), 12);
        assert_eq!(a.acc_add(QAcc::ZERO).unwrap(), a);

        let mut sum = QAcc::ZERO;
        for _ in 0..1024 {
            sum = sum.acc_add(QAcc::from_raw(1 << 32)).unwrap();
        }
        assert_eq!(sum.raw(), 1 << 42);
    }

    #[test]
    fn acc_add_overflow() {
        let top = QAcc::from_raw(i128::MAX);
        assert_eq!(top.acc_add(QAcc::from_raw(1)), Err(ArithError::AccOverflow));
    }

    #[test]
    fn narrow_examples() {
        let mut sat = 0u64;
        let one = QAcc::from_qnum(QNum::ONE);
        assert_eq!(one.narrow(&mut sat), QNum::ONE);

        // 1.5 + 2^-20: bits below 2^-16 truncate away.
        let x = QAcc::from_real(1.5 + 2f64.powi(-20));
        assert_eq!(x.narrow(&mut sat).to_real(), 1.5);
        assert_eq!(sat, 0);

        let big = QAcc::from_real(1e6);
        assert_eq!(big.narrow(&mut sat), QNum::MAX);
        assert_eq!(sat, 1);

        // Floor semantics on negatives.
        let neg = QAcc::from_real(-1.5 - 2f64.powi(-20));
        let narrowed = neg.narrow(&mut sat);
        assert_eq!(narrowed.raw(), -(3 << 15) - 1);
    }

    #[test]
    fn product_matches_real_arithmetic_small() {
        // Values small enough that f64 holds the exact product.
        let a = QNum::quantize(-2.5);
        let b = QNum::quantize(4.0);
        let p = QAcc::product(a, b);
        assert_eq!(p.to_real(), -10.0);
        assert_eq!(QAcc::product(QNum::ZERO, b), QAcc::ZERO);
    }

    /// Independent limb-based product oracle: splits each raw into 16-bit
    /// limbs and recombines, never forming the i64 product directly.
    fn limb_product(a: i32, b: i32) -> i128 {
        let (sa, ma) = (a < 0, a.unsigned_abs() as u64);
        let (sb, mb) = (b < 0, b.unsigned_abs() as u64);
        let (a_lo, a_hi) = (ma & 0xFFFF, ma >> 16);
        let (b_lo, b_hi) = (mb & 0xFFFF, mb >> 16);
        let p = (a_lo * b_lo) as u128
            + (((a_lo * b_hi) as u128) << 16)
            + (((a_hi * b_lo) as u128) << 16)
            + (((a_hi * b_hi) as u128) << 32);
        let signed = if sa ^ sb { -(p as i128) } else { p as i128 };
        signed << 32
    }

    proptest! {
        #[test]
        fn round_trip(raw in any::<i32>()) {
            let q = QNum::from_raw(raw);
            prop_assert_eq!(QNum::quantize(q.to_real()), q);
        }

        #[test]
        fn exact_products(a in any::<i32>(), b in any::<i32>()) {
            let p = QAcc::product(QNum::from_raw(a), QNum::from_raw(b));
            prop_assert_eq!(p.raw(), limb_product(a, b));
        }

        #[test]
        fn accumulation_order_independence(values in proptest::collection::vec(any::<i64>(), 1..64), seed in any::<u64>()) {
            let accs: Vec<QAcc> = values.iter().map(|&v| QAcc::from_raw(v as i128)).collect();
            let forward = accs.iter().try_fold(QAcc::ZERO, |s, &a| s.acc_add(a)).unwrap();
            // Deterministic permutation from the seed.
            let mut perm: Vec<usize> = (0..accs.len()).collect();
            let mut state = seed;
            for i in (1..perm.len()).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let j = (state >> 33) as usize % (i + 1);
                perm.swap(i, j);
            }
            let shuffled = perm.iter().try_fold(QAcc::ZERO, |s, &i| s.acc_add(accs[i])).unwrap();
            prop_assert_eq!(forward, shuffled);
        }

        #[test]
        fn split_sign_recompose(raw in (i32::MIN + 1)..=i32::MAX) {
            let q = QNum::from_raw(raw);
            prop_assert_eq!(q.split_sign().unwrap().recompose(), q);
        }
    }
}
