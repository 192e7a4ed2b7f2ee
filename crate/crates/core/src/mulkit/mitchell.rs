//! Log-domain multiplication kernels: the classic linear-log approximation,
//! its operand-truncating variant, and the one-pass iterative correction.
//!
//! All kernels operate on raw unsigned magnitudes (at most 31 bits, so the
//! characteristic never exceeds 30). Sign handling lives with the caller.

/// Log representation of a positive magnitude: `M = 2^characteristic * (1 + mantissa)`,
/// exact before any truncation. The mantissa is held as a Q0.32 fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogRep {
    /// Bit position of the leading one, 0..=30 for `QNum` magnitudes.
    pub characteristic: u32,
    /// Fraction in `[0, 1)` holding the bits below the leading one, as Q0.32.
    pub mantissa: u64,
}

impl LogRep {
    /// Decomposes a nonzero magnitude. The mantissa keeps every bit below the
    /// leading one; no information is lost here.
    #[inline]
    pub fn decompose(mag: u32) -> LogRep {
        debug_assert!(mag > 0);
        let k = 31 - mag.leading_zeros();
        let below = (mag as u64) & ((1u64 << k) - 1);
        LogRep {
            characteristic: k,
            mantissa: below << (32 - k),
        }
    }

    /// Exact recomposition, valid because the mantissa carries at most
    /// `characteristic` significant bits.
    #[inline]
    pub fn magnitude(self) -> u32 {
        let base = 1u64 << self.characteristic;
        (base + (self.mantissa >> (32 - self.characteristic))) as u32
    }
}

/// Linear-log multiplication on magnitudes: add characteristics and mantissas,
/// then decode `2^k * (1 + m)` (with the carry into the characteristic when
/// the mantissa sum reaches one). The result never exceeds the exact product.
#[inline]
pub fn mitchell_mag(a: u32, b: u32) -> u64 {
    let la = LogRep::decompose(a);
    let lb = LogRep::decompose(b);
    mitchell_decode(la.characteristic + lb.characteristic, la.mantissa + lb.mantissa)
}

/// Antilog decode of characteristic `k` and Q0.32 mantissa sum `f` (possibly
/// >= 1). Exact in integers: the mantissa sum's denominator never exceeds
/// `2^max(k1,k2) <= 2^k`, so no set bits are shifted out.
#[inline]
fn mitchell_decode(k: u32, f: u64) -> u64 {
    const ONE: u64 = 1 << 32;
    if f < ONE {
        ((((ONE + f) as u128) << k) >> 32) as u64
    } else {
        // Carry: renormalize to characteristic k+1, mantissa f-1.
        (((f as u128) << (k + 1)) >> 32) as u64
    }
}

/// Keeps the leading one plus the next `w - 1` magnitude bits, dropping the
/// rest. Magnitudes with fewer significant bits pass through unchanged.
#[inline]
pub fn truncate_to_width(mag: u32, w: u32) -> u32 {
    debug_assert!(mag > 0 && w >= 2);
    let h = 31 - mag.leading_zeros();
    if h < w {
        return mag;
    }
    mag & !((1u32 << (h + 1 - w)) - 1)
}

/// Mitch-w kernel: both operand magnitudes are truncated to `w` bits (leading
/// one plus `w - 1` mantissa bits) before the log addition.
#[inline]
pub fn mitchw_mag(a: u32, b: u32, w: u32) -> u64 {
    mitchell_mag(truncate_to_width(a, w), truncate_to_width(b, w))
}

/// Operand truncation width of the iterative kernel, matching the cost class
/// of the cited truncated design. Residues inherit at most `ITER_WIDTH - 1`
/// significant bits, so they need no further truncation.
pub const ITER_WIDTH: u32 = 8;

/// One-pass iterative log multiplication. The first pass decodes
/// `2^(k1+k2) + r_a*2^k2 + r_b*2^k1` exactly (the no-carry decomposition of
/// the truncated operands, where `r` is the operand minus its leading-one
/// term), and a single correction adds the Mitchell product of the residues.
/// Exact whenever either residue is zero.
#[inline]
pub fn iterlog_mag(a: u32, b: u32) -> u64 {
    let ta = truncate_to_width(a, ITER_WIDTH);
    let tb = truncate_to_width(b, ITER_WIDTH);
    let ka = 31 - ta.leading_zeros();
    let kb = 31 - tb.leading_zeros();
    let ra = ta - (1 << ka);
    let rb = tb - (1 << kb);
    let first = (1u64 << (ka + kb)) + ((ra as u64) << kb) + ((rb as u64) << ka);
    if ra == 0 || rb == 0 {
        first
    } else {
        first + mitchell_mag(ra, rb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logrep_round_trip() {
        for mag in [1u32, 2, 3, 5, 0x7FFF_FFFF, 65536, 327680] {
            let rep = LogRep::decompose(mag);
            assert_eq!(rep.magnitude(), mag, "mag {mag}");
            let exact = (1u64 << rep.characteristic) as f64
                * (1.0 + rep.mantissa as f64 / 2f64.powi(32));
            assert_eq!(exact, mag as f64);
        }
    }

    #[test]
    fn powers_of_two_are_exact() {
        // Zero mantissas make the log addition exact.
        assert_eq!(mitchell_mag(4 << 16, 8 << 16), (32u64) << 32);
        assert_eq!(mitchw_mag(4 << 16, 8 << 16, 6), (32u64) << 32);
        assert_eq!(iterlog_mag(4 << 16, 8 << 16), (32u64) << 32);
    }

    #[test]
    fn five_times_five_hand_trace() {
        // 5.0 has k=2, m=0.25 at value scale; log sum 4.5 decodes to 2^4*1.5 = 24.
        let five = 5u32 << 16;
        let exact = (25u64) << 32;
        assert_eq!(mitchell_mag(five, five), (24u64) << 32);
        // The 2-bit mantissa survives w=6 truncation.
        assert_eq!(mitchw_mag(five, five, 6), (24u64) << 32);
        // Residues 1.0 x 1.0 correct the first pass exactly here.
        assert_eq!(iterlog_mag(five, five), exact);
    }

    #[test]
    fn never_overestimates() {
        let cases = [
            (3u32, 3u32),
            (7, 11),
            (0x7FFF_FFFF, 0x7FFF_FFFF),
            (123_456, 654_321),
            (1, 0x7FFF_FFFF),
        ];
        for (a, b) in cases {
            let exact = a as u64 * b as u64;
            assert!(mitchell_mag(a, b) <= exact);
            assert!(mitchw_mag(a, b, 6) <= mitchell_mag(a, b));
            assert!(iterlog_mag(a, b) <= exact);
        }
    }

    #[test]
    fn truncation_drops_low_bits_only() {
        assert_eq!(truncate_to_width(0b1111_1111, 6), 0b1111_1100);
        assert_eq!(truncate_to_width(0b10_0001, 6), 0b10_0001);
        assert_eq!(truncate_to_width(1, 6), 1);
        // Leading one plus one mantissa bit survive w=2.
        assert_eq!(truncate_to_width(0xFFFF_FFFF >> 1, 2), 0x6000_0000);
    }
}
