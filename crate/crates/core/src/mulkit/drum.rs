//! Dynamic-range truncated multiplication: keep the `k` leading significant
//! bits, replace a nonzero dropped tail by a one in its top position
//! (unbiasing), and multiply the reduced magnitudes exactly.

/// Reduces a magnitude to its `k` leading significant bits. A nonzero dropped
/// tail is replaced by its midpoint (a single one in the tail's top bit),
/// which balances truncation error exactly for uniform tails; magnitudes
/// whose tail is already zero pass through exactly. Per-operand relative
/// error is therefore bounded by `2^-k`.
#[inline]
pub fn drum_reduce(mag: u32, k: u32) -> u32 {
    debug_assert!(mag > 0 && k >= 3);
    let h = 31 - mag.leading_zeros();
    if h < k {
        return mag;
    }
    let tail_bits = h + 1 - k;
    let tail = mag & ((1u32 << tail_bits) - 1);
    if tail == 0 {
        return mag;
    }
    (mag ^ tail) | (1u32 << (tail_bits - 1))
}

/// DRUM-k multiplication on magnitudes: reduce both operands, multiply
/// exactly. The reduction zeroes tail bits in place, so the product's scale
/// needs no further adjustment.
#[inline]
pub fn drum_mag(a: u32, b: u32, k: u32) -> u64 {
    drum_reduce(a, k) as u64 * drum_reduce(b, k) as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_in_k_bits_is_exact() {
        // 3.0 and 5.0 in Q16.16 have 2 and 3 significant bits; nothing is
        // dropped, so the product is exact: 15.0.
        let three = 3u32 << 16;
        let five = 5u32 << 16;
        assert_eq!(drum_mag(three, five, 6), (15u64) << 32);
        assert_eq!(drum_reduce(three, 6), three);
        assert_eq!(drum_reduce(five, 6), five);
    }

    #[test]
    fn nonzero_tail_is_replaced_by_midpoint() {
        // 0b1000_0001: window keeps the top 6 bits, the 2-bit tail 0b01 is
        // nonzero and becomes 0b10.
        assert_eq!(drum_reduce(0b1000_0001, 6), 0b1000_0010);
        // Tail of zeros stays exact.
        assert_eq!(drum_reduce(0b1000_0100, 6), 0b1000_0100);
        assert_eq!(drum_reduce(0b111, 6), 0b111);
    }

    #[test]
    fn reduction_is_unbiased_per_window() {
        // Summed over a full tail period the replacement error cancels.
        for base in [0b100000u32 << 3, 0b110101u32 << 4] {
            let tail_bits = (31 - base.leading_zeros()) + 1 - 6;
            let period = 1u32 << tail_bits;
            let mut err_sum: i64 = 0;
            for d in 0..period {
                let m = base | d;
                err_sum += drum_reduce(m, 6) as i64 - m as i64;
            }
            assert_eq!(err_sum, 0, "base {base:#b}");
        }
    }

    #[test]
    fn error_bound_small_exhaustive() {
        // 8-bit magnitudes, k=4: per-operand error below 2^-k bounds the
        // product error by ~2^(1-k) + 2^-2k.
        let bound = 2f64.powi(1 - 4) + 2f64.powi(-8);
        for a in 1u32..256 {
            for b in 1u32..256 {
                let exact = (a * b) as f64;
                let approx = drum_mag(a, b, 4) as f64;
                let rel = (approx - exact) / exact;
                assert!(rel.abs() <= bound, "{a} x {b}: {rel}");
            }
        }
    }

    #[test]
    fn error_bound_12bit_exhaustive() {
        // The full sweep backing the k=6 bound: every 12-bit magnitude pair
        // stays within 3.2% of the exact product.
        let mut worst = 0f64;
        for a in 1u32..4096 {
            for b in a..4096 {
                let exact = (a * b) as f64;
                let approx = drum_mag(a, b, 6) as f64;
                let rel = ((approx - exact) / exact).abs();
                if rel > worst {
                    worst = rel;
                }
            }
        }
        assert!(worst <= 0.032, "worst relative error {worst}");
    }
}
