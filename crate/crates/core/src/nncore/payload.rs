//! The pipeline abstraction: the executor is generic over the payload carried
//! on tensor edges. `QNum` drives the Q16.16 pipeline with exact wide
//! accumulation; `f32` drives the real-valued pipeline used by bfloat16.

use std::cmp::Ordering;

use crate::mulkit::{make_multiplier, Multiplier, MultiplierSpec, PipelineMul, RealMultiplier};
use crate::mulkit::InvalidSpec;
use crate::qformat::{ArithError, QAcc, QNum};

/// One pipeline's arithmetic: sample type, accumulator type, multiplier
/// handle, and the conversions between them.
pub trait Payload: Copy + Send + Sync + PartialEq + 'static {
    type Acc: Copy + Send + Sync;
    type Mul: Copy + Send + Sync;

    const ZERO: Self;

    /// Binds a multiplier spec for this pipeline.
    fn make_mul(spec: &MultiplierSpec) -> Result<Self::Mul, InvalidSpec>;
    /// The reference multiplier this pipeline is compared against.
    fn exact_mul() -> Self::Mul;

    /// Ingests a real value; counts saturation in the fixed pipeline.
    fn from_real(x: f64, saturations: &mut u64) -> Self;
    fn to_real(self) -> f64;

    fn mul(m: &Self::Mul, a: Self, b: Self) -> Result<Self::Acc, ArithError>;
    fn acc_zero() -> Self::Acc;
    fn widen(self) -> Self::Acc;
    fn acc_add(a: Self::Acc, b: Self::Acc) -> Result<Self::Acc, ArithError>;
    /// Division for average pooling: floor division in the fixed pipeline,
    /// real division otherwise.
    fn acc_div(a: Self::Acc, n: u32) -> Self::Acc;
    fn narrow(a: Self::Acc, saturations: &mut u64) -> Self;

    fn relu(self) -> Self;
    fn pick_max(a: Self, b: Self) -> Self;
    /// Total order used by top-k scoring.
    fn cmp_score(a: &Self, b: &Self) -> Ordering;
}

impl Payload for QNum {
    type Acc = QAcc;
    type Mul = Multiplier;

    const ZERO: QNum = QNum::ZERO;

    fn make_mul(spec: &MultiplierSpec) -> Result<Multiplier, InvalidSpec> {
        match make_multiplier(spec)? {
            PipelineMul::Fixed(m) => Ok(m),
            PipelineMul::Real(_) => Err(InvalidSpec(format!(
                "'{spec}' belongs to the real-valued pipeline"
            ))),
        }
    }

    fn exact_mul() -> Multiplier {
        Multiplier::Exact
    }

    #[inline]
    fn from_real(x: f64, saturations: &mut u64) -> QNum {
        QNum::quantize_counted(x, saturations)
    }

    #[inline]
    fn to_real(self) -> f64 {
        QNum::to_real(self)
    }

    #[inline]
    fn mul(m: &Multiplier, a: QNum, b: QNum) -> Result<QAcc, ArithError> {
        m.mul(a, b)
    }

    #[inline]
    fn acc_zero() -> QAcc {
        QAcc::ZERO
    }

    #[inline]
    fn widen(self) -> QAcc {
        QAcc::from_qnum(self)
    }

    #[inline]
    fn acc_add(a: QAcc, b: QAcc) -> Result<QAcc, ArithError> {
        a.acc_add(b)
    }

    #[inline]
    fn acc_div(a: QAcc, n: u32) -> QAcc {
        a.div_floor(n)
    }

    #[inline]
    fn narrow(a: QAcc, saturations: &mut u64) -> QNum {
        a.narrow(saturations)
    }

    #[inline]
    fn relu(self) -> QNum {
        QNum::from_raw(self.raw().max(0))
    }

    #[inline]
    fn pick_max(a: QNum, b: QNum) -> QNum {
        if b.raw() > a.raw() {
            b
        } else {
            a
        }
    }

    #[inline]
    fn cmp_score(a: &QNum, b: &QNum) -> Ordering {
        a.raw().cmp(&b.raw())
    }
}

impl Payload for f32 {
    type Acc = f32;
    type Mul = RealMultiplier;

    const ZERO: f32 = 0.0;

    fn make_mul(spec: &MultiplierSpec) -> Result<RealMultiplier, InvalidSpec> {
        match make_multiplier(spec)? {
            PipelineMul::Real(m) => Ok(m),
            PipelineMul::Fixed(_) => Err(InvalidSpec(format!(
                "'{spec}' belongs to the fixed-point pipeline"
            ))),
        }
    }

    fn exact_mul() -> RealMultiplier {
        RealMultiplier::Exact
    }

    #[inline]
    fn from_real(x: f64, _saturations: &mut u64) -> f32 {
        x as f32
    }

    #[inline]
    fn to_real(self) -> f64 {
        self as f64
    }

    #[inline]
    fn mul(m: &RealMultiplier, a: f32, b: f32) -> Result<f32, ArithError> {
        Ok(m.mul(a, b))
    }

    #[inline]
    fn acc_zero() -> f32 {
        0.0
    }

    #[inline]
    fn widen(self) -> f32 {
        self
    }

    #[inline]
    fn acc_add(a: f32, b: f32) -> Result<f32, ArithError> {
        Ok(a + b)
    }

    #[inline]
    fn acc_div(a: f32, n: u32) -> f32 {
        a / n as f32
    }

    #[inline]
    fn narrow(a: f32, _saturations: &mut u64) -> f32 {
        a
    }

    #[inline]
    fn relu(self) -> f32 {
        self.max(0.0)
    }

    #[inline]
    fn pick_max(a: f32, b: f32) -> f32 {
        if b > a {
            b
        } else {
            a
        }
    }

    #[inline]
    fn cmp_score(a: &f32, b: &f32) -> Ordering {
        a.total_cmp(b)
    }
}
