//! Multiplier characterization: relative error over many random operand
//! pairs, summarized as mean/variance/min/max plus a histogram, with an
//! optional raw (a, b, err) dump for error-surface plots.

use crate::mulkit::{make_multiplier, Multiplier, MultiplierSpec, PipelineMul, RealMultiplier};
use crate::qformat::QNum;

use super::sampling::{sample_pair, stream_rng, RangePolicy};
use super::stats::{run_chunked, Histogram, Moments};
use super::StatError;

const STREAM_CHARACTERIZE: u64 = 0x43;

/// One measured multiplication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSample {
    pub a: QNum,
    pub b: QNum,
    pub rel_err: f64,
}

/// Characterization parameters. `dump` caps how many leading samples are
/// returned raw; the summary always covers all `n`.
#[derive(Debug, Clone, Copy)]
pub struct CharacterizeConfig {
    pub n: u64,
    pub seed: u64,
    pub policy: RangePolicy,
    pub dump: usize,
}

impl CharacterizeConfig {
    pub fn new(n: u64, seed: u64) -> CharacterizeConfig {
        CharacterizeConfig {
            n,
            seed,
            policy: RangePolicy::Uniform,
            dump: 0,
        }
    }
}

/// Characterization result.
#[derive(Debug, Clone)]
pub struct Characterization {
    pub spec: MultiplierSpec,
    pub n: u64,
    pub seed: u64,
    pub policy: RangePolicy,
    pub mean: f64,
    pub variance: f64,
    pub min: f64,
    pub max: f64,
    pub histogram: Histogram,
    /// Pairs whose exact product was zero, excluded from the statistics.
    /// Zero operands are never drawn, so this stays zero for the fixed kinds.
    pub excluded: u64,
    pub samples: Vec<ErrorSample>,
}

struct Partial {
    moments: Moments,
    histogram: Histogram,
    excluded: u64,
    samples: Vec<ErrorSample>,
}

/// Relative error of one multiplication under `spec`, measured against the
/// exact product of the same operands. Fixed kinds compare in the Q16.16
/// pipeline; bfloat16 compares its binary32 product against the wide real
/// product of the binary32 operands.
fn measure(fixed: &FixedOrReal, a: QNum, b: QNum) -> Option<f64> {
    match fixed {
        FixedOrReal::Fixed(m) => {
            let exact = Multiplier::Exact.mul(a, b).ok()?;
            let approx = m.mul(a, b).ok()?;
            if exact.is_zero() {
                return None;
            }
            let e = exact.raw().unsigned_abs() as f64;
            let ap = approx.raw().unsigned_abs() as f64;
            Some((ap - e) / e)
        }
        FixedOrReal::Real(m) => {
            let a32 = a.to_real() as f32;
            let b32 = b.to_real() as f32;
            let exact = a32 as f64 * b32 as f64;
            if exact == 0.0 {
                return None;
            }
            let approx = m.mul(a32, b32) as f64;
            Some((approx.abs() - exact.abs()) / exact.abs())
        }
    }
}

enum FixedOrReal {
    Fixed(Multiplier),
    Real(RealMultiplier),
}

/// Draws `cfg.n` operand pairs, measures each against the exact product, and
/// summarizes. Deterministic for a fixed seed regardless of worker count.
pub fn characterize(
    spec: &MultiplierSpec,
    cfg: &CharacterizeConfig,
) -> Result<Characterization, StatError> {
    if cfg.n == 0 {
        return Err(StatError::Invalid("sample count must be at least 1".into()));
    }
    let handle = match make_multiplier(spec)? {
        PipelineMul::Fixed(m) => FixedOrReal::Fixed(m),
        PipelineMul::Real(m) => FixedOrReal::Real(m),
    };
    let dump_cap = cfg.dump;
    let eval = |chunk_idx: u64, range: std::ops::Range<u64>| {
        let mut rng = stream_rng(cfg.seed, STREAM_CHARACTERIZE, chunk_idx);
        let mut part = Partial {
            moments: Moments::default(),
            histogram: Histogram::new(-1.0, 1.0, 200),
            excluded: 0,
            samples: Vec::new(),
        };
        for i in range {
            let (a, b) = sample_pair(cfg.policy, &mut rng);
            match measure(&handle, a, b) {
                Some(err) => {
                    part.moments.push(err);
                    part.histogram.push(err);
                    if (i as usize) < dump_cap {
                        part.samples.push(ErrorSample { a, b, rel_err: err });
                    }
                }
                None => part.excluded += 1,
            }
        }
        part
    };
    let merged = run_chunked(cfg.n, eval, |acc: &mut Partial, part| {
        acc.moments.merge(&part.moments);
        acc.histogram.merge(&part.histogram);
        acc.excluded += part.excluded;
        acc.samples.extend(part.samples);
    })
    .expect("n >= 1");
    Ok(Characterization {
        spec: *spec,
        n: cfg.n,
        seed: cfg.seed,
        policy: cfg.policy,
        mean: merged.moments.mean,
        variance: merged.moments.variance(),
        min: merged.moments.min,
        max: merged.moments.max,
        histogram: merged.histogram,
        excluded: merged.excluded,
        samples: merged.samples,
    })
}

/// Mean relative error binned by the decade of the exact product magnitude.
/// Returns `(decade, mean, count)` for bins holding at least `min_count`
/// samples. Supports the evenness check: per-bin means stay close to the
/// global mean for the log multipliers.
pub fn binned_means(
    spec: &MultiplierSpec,
    cfg: &CharacterizeConfig,
    min_count: u64,
) -> Result<Vec<(i32, f64, u64)>, StatError> {
    let handle = match make_multiplier(spec)? {
        PipelineMul::Fixed(m) => FixedOrReal::Fixed(m),
        PipelineMul::Real(m) => FixedOrReal::Real(m),
    };
    let eval = |chunk_idx: u64, range: std::ops::Range<u64>| {
        let mut rng = stream_rng(cfg.seed, STREAM_CHARACTERIZE, chunk_idx);
        let mut bins: std::collections::BTreeMap<i32, Moments> = std::collections::BTreeMap::new();
        for _ in range {
            let (a, b) = sample_pair(cfg.policy, &mut rng);
            if let Some(err) = measure(&handle, a, b) {
                let product = (a.to_real() * b.to_real()).abs();
                let decade = product.log10().floor() as i32;
                bins.entry(decade).or_default().push(err);
            }
        }
        bins
    };
    let merged = run_chunked(cfg.n, eval, |acc, part| {
        for (decade, m) in part {
            acc.entry(decade).or_default().merge(&m);
        }
    })
    .expect("n >= 1");
    Ok(merged
        .into_iter()
        .filter(|(_, m)| m.count >= min_count)
        .map(|(d, m)| (d, m.mean, m.count))
        .collect())
}
