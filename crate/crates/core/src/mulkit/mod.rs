//! Bit-exact models of the exact and approximate multipliers.
//!
//! Every fixed-point kind shares the contract `mul(a, b) -> QAcc`: the result
//! approximates `to_real(a) * to_real(b)`, a zero operand yields an exactly
//! zero result, and the sign of a nonzero result is the XOR of the operand
//! signs. The bfloat16 kind runs in the real-valued pipeline instead and
//! satisfies the same sign law through binary32 semantics.

mod bf16;
mod drum;
mod mitchell;
mod spec;

pub use bf16::{bf16_truncate, mul_bf16};
pub use drum::{drum_mag, drum_reduce};
pub use mitchell::{iterlog_mag, mitchell_mag, mitchw_mag, truncate_to_width, LogRep, ITER_WIDTH};
pub use spec::{
    InvalidSpec, MultiplierKind, MultiplierSpec, SignMode, DEFAULT_DRUM_KEPT_BITS,
    DEFAULT_MITCHW_WIDTH,
};

use crate::qformat::{ArithError, QAcc, QNum, ACC_FRAC_BITS, Q_FRAC_BITS};

const PRODUCT_SHIFT: u32 = ACC_FRAC_BITS - 2 * Q_FRAC_BITS;

/// A bound fixed-point multiplier: cheap to copy, safe to share across
/// threads, and a pure function of its operands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Multiplier {
    Exact,
    Mitchell { sign: SignMode },
    MitchW { w: u32, sign: SignMode },
    Drum { k: u32 },
    IterLog,
    /// Scales each exact product by `factor_q32 / 2^32`. Test plumbing for
    /// the scaling-invariance property; exact in the accumulator because the
    /// guard bits absorb the full dyadic factor.
    ConstError { factor_q32: i64 },
}

impl Multiplier {
    /// Multiplies two samples under this kind's semantics.
    pub fn mul(&self, a: QNum, b: QNum) -> Result<QAcc, ArithError> {
        if a.is_zero() || b.is_zero() {
            return Ok(QAcc::ZERO);
        }
        match *self {
            Multiplier::Exact => Ok(QAcc::product(a, b)),
            Multiplier::Mitchell { sign } => {
                log_mul(a, b, sign, |ma, mb| mitchell_mag(ma, mb))
            }
            Multiplier::MitchW { w, sign } => {
                log_mul(a, b, sign, |ma, mb| mitchw_mag(ma, mb, w))
            }
            Multiplier::Drum { k } => log_mul(a, b, SignMode::ExactSign, |ma, mb| {
                drum_mag(ma, mb, k)
            }),
            Multiplier::IterLog => {
                log_mul(a, b, SignMode::ExactSign, |ma, mb| iterlog_mag(ma, mb))
            }
            Multiplier::ConstError { factor_q32 } => {
                let p = a.raw() as i64 * b.raw() as i64;
                Ok(QAcc::from_raw(p as i128 * factor_q32 as i128))
            }
        }
    }
}

/// Shared sign handling for the magnitude kernels: decompose per the sign
/// mode, run the kernel, reapply the XOR of the operand signs exactly.
#[inline]
fn log_mul(
    a: QNum,
    b: QNum,
    sign: SignMode,
    kernel: impl Fn(u32, u32) -> u64,
) -> Result<QAcc, ArithError> {
    let (sa, ma) = decompose(a, sign)?;
    let (sb, mb) = decompose(b, sign)?;
    if ma == 0 || mb == 0 {
        // One's-complement decode of raw -1 has magnitude zero.
        return Ok(QAcc::ZERO);
    }
    let mag = kernel(ma, mb);
    debug_assert!(mag < 1 << 62);
    let raw = (mag as i128) << PRODUCT_SHIFT;
    Ok(QAcc::from_raw(if sa * sb < 0 { -raw } else { raw }))
}

#[inline]
fn decompose(q: QNum, sign: SignMode) -> Result<(i32, u32), ArithError> {
    match sign {
        SignMode::ExactSign => {
            let sm = q.split_sign()?;
            Ok((sm.sign, sm.mag))
        }
        SignMode::OnesComplement => {
            if q.raw() >= 0 {
                Ok((1, q.raw() as u32))
            } else {
                Ok((-1, !(q.raw() as u32)))
            }
        }
    }
}

/// A multiplier for the real-valued (binary32) pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RealMultiplier {
    /// Plain binary32 multiplication, the FP32 reference.
    Exact,
    Bf16,
}

impl RealMultiplier {
    #[inline]
    pub fn mul(&self, a: f32, b: f32) -> f32 {
        match self {
            RealMultiplier::Exact => a * b,
            RealMultiplier::Bf16 => mul_bf16(a, b),
        }
    }
}

/// A validated, bound multiplier handle for either pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PipelineMul {
    Fixed(Multiplier),
    Real(RealMultiplier),
}

/// Binds a spec to a callable handle, validating its parameters.
pub fn make_multiplier(spec: &MultiplierSpec) -> Result<PipelineMul, InvalidSpec> {
    spec.validate()?;
    Ok(match spec.kind {
        MultiplierKind::Exact => PipelineMul::Fixed(Multiplier::Exact),
        MultiplierKind::Mitchell => PipelineMul::Fixed(Multiplier::Mitchell {
            sign: spec.sign_mode,
        }),
        MultiplierKind::MitchW => PipelineMul::Fixed(Multiplier::MitchW {
            w: spec.w,
            sign: spec.sign_mode,
        }),
        MultiplierKind::Drum => PipelineMul::Fixed(Multiplier::Drum { k: spec.k }),
        MultiplierKind::IterLogTrunc => PipelineMul::Fixed(Multiplier::IterLog),
        MultiplierKind::Bfloat16 => PipelineMul::Real(RealMultiplier::Bf16),
        MultiplierKind::ConstError => PipelineMul::Fixed(Multiplier::ConstError {
            factor_q32: ((1.0 + spec.const_error) * 2f64.powi(32)).round() as i64,
        }),
    })
}

/// The fixed-point handle for a spec, or an error for real-pipeline kinds.
pub fn make_fixed_multiplier(spec: &MultiplierSpec) -> Result<Multiplier, InvalidSpec> {
    match make_multiplier(spec)? {
        PipelineMul::Fixed(m) => Ok(m),
        PipelineMul::Real(_) => Err(InvalidSpec(format!(
            "'{spec}' runs the real-valued pipeline, not the fixed-point one"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(x: f64) -> QNum {
        QNum::quantize(x)
    }

    #[test]
    fn exact_examples() {
        let m = Multiplier::Exact;
        assert_eq!(m.mul(q(1.0), q(1.0)).unwrap().to_real(), 1.0);
        assert_eq!(m.mul(q(-2.5), q(4.0)).unwrap().to_real(), -10.0);
        assert_eq!(m.mul(QNum::ZERO, q(123.0)).unwrap(), QAcc::ZERO);
    }

    #[test]
    fn mitchell_examples() {
        let m = Multiplier::Mitchell { sign: SignMode::ExactSign };
        assert_eq!(m.mul(q(4.0), q(8.0)).unwrap().to_real(), 32.0);
        assert_eq!(m.mul(q(5.0), q(5.0)).unwrap().to_real(), 24.0);
        assert_eq!(m.mul(q(-5.0), q(5.0)).unwrap().to_real(), -24.0);
        assert_eq!(m.mul(QNum::MIN, q(1.0)), Err(ArithError::MostNegative));
    }

    #[test]
    fn mitchw_examples() {
        let m = Multiplier::MitchW { w: 6, sign: SignMode::OnesComplement };
        assert_eq!(m.mul(q(4.0), q(8.0)).unwrap().to_real(), 32.0);
        // 0.25 mantissas survive w=6 truncation.
        assert_eq!(m.mul(q(5.0), q(5.0)).unwrap().to_real(), 24.0);
    }

    #[test]
    fn c1_decode_is_off_by_one() {
        // -1.0 has raw -65536; its one's-complement magnitude is 65535.
        let m = Multiplier::MitchW { w: 32, sign: SignMode::OnesComplement };
        let got = m.mul(q(-1.0), q(2.0)).unwrap();
        let exact_minus_ulp = Multiplier::Exact
            .mul(QNum::from_raw(-65535), q(2.0))
            .unwrap();
        assert!(got.raw() >= exact_minus_ulp.raw());
        assert!(got.raw() < 0);

        // Raw -1 decodes to magnitude zero: a nonzero pair annihilates.
        let near_zero = QNum::from_raw(-1);
        assert_eq!(m.mul(near_zero, q(100.0)).unwrap(), QAcc::ZERO);

        // i32::MIN is fine under C1: !0x80000000 = 0x7FFFFFFF.
        assert!(m.mul(QNum::MIN, q(1.0)).is_ok());
    }

    #[test]
    fn drum_examples() {
        let m = Multiplier::Drum { k: 6 };
        assert_eq!(m.mul(q(3.0), q(5.0)).unwrap().to_real(), 15.0);
        assert_eq!(m.mul(q(-3.0), q(5.0)).unwrap().to_real(), -15.0);
        assert_eq!(m.mul(QNum::MIN, q(1.0)), Err(ArithError::MostNegative));
    }

    #[test]
    fn iterlog_examples() {
        let m = Multiplier::IterLog;
        assert_eq!(m.mul(q(4.0), q(8.0)).unwrap().to_real(), 32.0);
        assert_eq!(m.mul(q(5.0), q(5.0)).unwrap().to_real(), 25.0);
    }

    #[test]
    fn const_error_scales_products_exactly() {
        let spec = MultiplierSpec::const_error(-0.0625);
        let m = make_fixed_multiplier(&spec).unwrap();
        let exact = Multiplier::Exact.mul(q(3.5), q(-1.25)).unwrap();
        let scaled = m.mul(q(3.5), q(-1.25)).unwrap();
        // factor = (1 - 1/16) * 2^32 exactly.
        let factor = (15i128 << 32) / 16;
        assert_eq!(scaled.raw(), (exact.raw() >> 32) * factor);
    }

    #[test]
    fn sign_law_and_zero_annihilation() {
        let kinds = [
            Multiplier::Exact,
            Multiplier::Mitchell { sign: SignMode::ExactSign },
            Multiplier::Mitchell { sign: SignMode::OnesComplement },
            Multiplier::MitchW { w: 6, sign: SignMode::OnesComplement },
            Multiplier::Drum { k: 6 },
            Multiplier::IterLog,
        ];
        let values = [q(1.5), q(-1.5), q(0.0078125), q(-1000.25), q(31000.0)];
        for m in kinds {
            for &a in &values {
                assert_eq!(m.mul(a, QNum::ZERO).unwrap(), QAcc::ZERO);
                assert_eq!(m.mul(QNum::ZERO, a).unwrap(), QAcc::ZERO);
                for &b in &values {
                    let r = m.mul(a, b).unwrap();
                    if !r.is_zero() {
                        let expect_neg = (a.raw() < 0) ^ (b.raw() < 0);
                        assert_eq!(r.raw() < 0, expect_neg, "{m:?} {a:?} {b:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn make_multiplier_dispatch() {
        let exact = make_multiplier(&MultiplierSpec::exact()).unwrap();
        assert_eq!(exact, PipelineMul::Fixed(Multiplier::Exact));
        let mw: MultiplierSpec = "mitchw:w=6:sign=c1".parse().unwrap();
        assert_eq!(
            make_multiplier(&mw).unwrap(),
            PipelineMul::Fixed(Multiplier::MitchW { w: 6, sign: SignMode::OnesComplement })
        );
        assert!(make_multiplier(&MultiplierSpec::drum(2)).is_err());
        assert!(matches!(
            make_multiplier(&MultiplierSpec::bf16()).unwrap(),
            PipelineMul::Real(RealMultiplier::Bf16)
        ));
        assert!(make_fixed_multiplier(&MultiplierSpec::bf16()).is_err());
    }
}
