//! bfloat16 emulation for the real-valued pipeline: operands are truncated to
//! bfloat16 (the low 16 significand bits dropped, no rounding) and multiplied
//! at binary32 width, with accumulation staying in full binary32 downstream.

/// Truncates a binary32 value to bfloat16 by zeroing the low 16 significand
/// bits. No rounding: the conversion error for positive normals lies in
/// `(-0.78%, 0]`.
#[inline]
pub fn bf16_truncate(x: f32) -> f32 {
    f32::from_bits(x.to_bits() & 0xFFFF_0000)
}

/// bfloat16 multiplication: truncate both operands, multiply in binary32.
/// Two 8-bit significands produce at most 16 significant bits, so the product
/// itself is exact at binary32 width.
#[inline]
pub fn mul_bf16(a: f32, b: f32) -> f32 {
    bf16_truncate(a) * bf16_truncate(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exactly_representable_values_pass_through() {
        assert_eq!(mul_bf16(1.0, 1.0), 1.0);
        assert_eq!(bf16_truncate(1.5), 1.5);
        assert_eq!(mul_bf16(0.0, 123.25), 0.0);
    }

    #[test]
    fn truncation_drops_low_mantissa_bits() {
        let x = 1.0 + 2f32.powi(-20);
        assert_eq!(bf16_truncate(x), 1.0);
        assert_eq!(mul_bf16(x, 2.0), 2.0);
    }

    #[test]
    fn conversion_error_band() {
        // Worst case is just below a mantissa boundary: drop approaches
        // 2^-7 relative but never reaches it.
        let worst = f32::from_bits(0x3F80_FFFF); // 1.0 + (2^16-1) * 2^-23
        let err = (bf16_truncate(worst) as f64 - worst as f64) / worst as f64;
        assert!(err > -0.0078125 && err <= 0.0);
    }

    #[test]
    fn sign_law() {
        assert!(mul_bf16(-1.25, 3.5) < 0.0);
        assert!(mul_bf16(-1.25, -3.5) > 0.0);
    }
}
