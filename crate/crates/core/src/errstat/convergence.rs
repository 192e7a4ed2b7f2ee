//! Dot-product error convergence: how the relative error of an exactly
//! accumulated dot product of approximate products tightens as the number of
//! summands grows.

use crate::mulkit::{make_fixed_multiplier, Multiplier, MultiplierSpec};
use crate::qformat::QAcc;

use super::sampling::{sample_pair, stream_rng, RangePolicy};
use super::stats::{run_chunked, Moments};
use super::StatError;

const STREAM_CONVERGENCE: u64 = 0xD0;

#[derive(Debug, Clone)]
pub struct ConvergenceConfig {
    pub lengths: Vec<usize>,
    pub trials: u64,
    pub seed: u64,
    /// Operand sampling. The default keeps operands positive so the reference
    /// dot product stays bounded away from zero; signs do not change the
    /// convergence mechanism because every kind handles them separately.
    pub policy: RangePolicy,
}

impl ConvergenceConfig {
    pub fn new(lengths: Vec<usize>, trials: u64, seed: u64) -> ConvergenceConfig {
        ConvergenceConfig {
            lengths,
            trials,
            seed,
            policy: RangePolicy::UniformPositive,
        }
    }
}

/// Error statistics of one dot-product length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergencePoint {
    pub n: usize,
    pub trials: u64,
    /// Mean over trials of the dot-product relative error.
    pub mean: f64,
    /// Variance over trials of the dot-product relative error.
    pub variance: f64,
}

/// For each length, draws `trials` random weight/input vectors, computes the
/// exact and approximate dot products (approximate multiplies, exact
/// accumulation), and reports the mean and variance of the relative error
/// across trials.
pub fn dot_error_convergence(
    spec: &MultiplierSpec,
    cfg: &ConvergenceConfig,
) -> Result<Vec<ConvergencePoint>, StatError> {
    if cfg.lengths.iter().any(|&n| n == 0) {
        return Err(StatError::Invalid("dot length must be at least 1".into()));
    }
    if cfg.trials == 0 {
        return Err(StatError::Invalid("trial count must be at least 1".into()));
    }
    let mul = make_fixed_multiplier(spec)?;
    let mut points = Vec::with_capacity(cfg.lengths.len());
    for (len_idx, &n) in cfg.lengths.iter().enumerate() {
        let stream = STREAM_CONVERGENCE ^ ((len_idx as u64) << 32);
        let eval = |_chunk_idx: u64, range: std::ops::Range<u64>| {
            let mut m = Moments::default();
            for trial in range {
                // Keyed by trial index, so results are independent of how
                // trials land in chunks.
                let mut rng = stream_rng(cfg.seed, stream, trial);
                if let Some(err) = dot_trial(&mul, n, cfg.policy, &mut rng) {
                    m.push(err);
                }
            }
            m
        };
        let moments = run_chunked(cfg.trials, eval, |a: &mut Moments, b| a.merge(&b))
            .expect("trials >= 1");
        points.push(ConvergencePoint {
            n,
            trials: moments.count,
            mean: moments.mean,
            variance: moments.variance(),
        });
    }
    Ok(points)
}

fn dot_trial(
    mul: &Multiplier,
    n: usize,
    policy: RangePolicy,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Option<f64> {
    let mut exact = QAcc::ZERO;
    let mut approx = QAcc::ZERO;
    for _ in 0..n {
        let (w, x) = sample_pair(policy, rng);
        exact = exact.acc_add(Multiplier::Exact.mul(w, x).ok()?).ok()?;
        approx = approx.acc_add(mul.mul(w, x).ok()?).ok()?;
    }
    if exact.is_zero() {
        return None;
    }
    let e = exact.raw().unsigned_abs() as f64;
    let a = approx.raw().unsigned_abs() as f64;
    Some((a - e) / e)
}
