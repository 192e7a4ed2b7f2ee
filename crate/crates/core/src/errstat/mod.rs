//! Error measurement machinery: multiplier characterization, dot-product
//! error convergence, per-channel variance reports, and per-layer mean-error
//! profiles.
//!
//! Relative error follows the magnitude form throughout:
//! `(|approx| - |exact|) / |exact|`.

mod characterize;
mod convergence;
mod network;
mod sampling;
mod stats;

pub use characterize::{
    binned_means, characterize, CharacterizeConfig, Characterization, ErrorSample,
};
pub use convergence::{dot_error_convergence, ConvergenceConfig, ConvergencePoint};
pub use network::{
    channel_variance_report, channel_variance_report_pair, layer_mean_error_profile,
    layer_mean_error_profile_pair, ChannelVariance, ChannelVarianceReport, LayerDeviation,
    LayerErrorProfile, DEGENERATE_VARIANCE_FLOOR,
};
pub use sampling::{sample_pair, stream_rng, uniform_nonzero, uniform_positive, RangePolicy};
pub use stats::{run_chunked, Histogram, Moments, CHUNK_SAMPLES};

use crate::mulkit::InvalidSpec;
use crate::nncore::ExecError;
use crate::qformat::QAcc;

/// Errors raised by the statistics layer.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatError {
    /// Relative error is undefined against a zero reference.
    #[error("relative error undefined: exact product is zero")]
    ZeroReference,
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Spec(#[from] InvalidSpec),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

/// Relative error of an approximate product against the exact one:
/// `(|approx| - |exact|) / |exact|`. Errors when the exact product is zero.
pub fn relative_error(exact: QAcc, approx: QAcc) -> Result<f64, StatError> {
    if exact.is_zero() {
        return Err(StatError::ZeroReference);
    }
    let e = exact.raw().unsigned_abs() as f64;
    let a = approx.raw().unsigned_abs() as f64;
    Ok((a - e) / e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qformat::QNum;

    #[test]
    fn relative_error_examples() {
        let exact = QAcc::product(QNum::quantize(5.0), QNum::quantize(5.0));
        let approx = QAcc::from_qnum(QNum::quantize(24.0));
        assert_eq!(relative_error(exact, approx).unwrap(), -0.04);
        assert_eq!(relative_error(exact, exact).unwrap(), 0.0);
        assert_eq!(
            relative_error(QAcc::ZERO, approx),
            Err(StatError::ZeroReference)
        );
    }

    #[test]
    fn magnitude_form_ignores_signs() {
        let exact = QAcc::from_qnum(QNum::quantize(-4.0));
        let approx = QAcc::from_qnum(QNum::quantize(3.0));
        assert_eq!(relative_error(exact, approx).unwrap(), -0.25);
    }
}
