//! Deterministic statistics: Welford moments with fixed-order merging, and a
//! chunked parallel runner whose results never depend on the worker count.

use rayon::prelude::*;

/// Running mean/variance/min/max over a stream of samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    m2: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for Moments {
    fn default() -> Self {
        Moments {
            count: 0,
            mean: 0.0,
            m2: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
        self.min = self.min.min(x);
        self.max = self.max.max(x);
    }

    /// Combines two partials (Chan's formula). Merging in a fixed order keeps
    /// the result bit-stable.
    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let total = self.count + other.count;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / total as f64;
        self.m2 += other.m2 + delta * delta * (self.count as f64 * other.count as f64) / total as f64;
        self.count = total;
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.m2 / self.count as f64
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        if self.count < 2 {
            f64::INFINITY
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

/// Fixed-bin histogram with explicit underflow/overflow tallies.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub bins: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Histogram {
        Histogram {
            lo,
            hi,
            bins: vec![0; bins],
            underflow: 0,
            overflow: 0,
        }
    }

    pub fn push(&mut self, x: f64) {
        if x < self.lo {
            self.underflow += 1;
        } else if x >= self.hi {
            self.overflow += 1;
        } else {
            let idx = ((x - self.lo) / (self.hi - self.lo) * self.bins.len() as f64) as usize;
            let last = self.bins.len() - 1;
            self.bins[idx.min(last)] += 1;
        }
    }

    pub fn merge(&mut self, other: &Histogram) {
        debug_assert!(self.lo == other.lo && self.hi == other.hi);
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            *a += b;
        }
        self.underflow += other.underflow;
        self.overflow += other.overflow;
    }
}

/// Samples per work chunk. Chunks are keyed by index (seeding included), so
/// the partition is part of the protocol, not a tuning knob.
pub const CHUNK_SAMPLES: u64 = 1 << 16;

/// Splits `total` items into fixed chunks, evaluates them in parallel, and
/// merges the partial results strictly in chunk-index order.
pub fn run_chunked<T, F, M>(total: u64, eval: F, mut merge: M) -> Option<T>
where
    T: Send,
    F: Fn(u64, std::ops::Range<u64>) -> T + Sync,
    M: FnMut(&mut T, T),
{
    let chunks = total.div_ceil(CHUNK_SAMPLES);
    let partials: Vec<T> = (0..chunks)
        .into_par_iter()
        .map(|idx| {
            let start = idx * CHUNK_SAMPLES;
            let end = (start + CHUNK_SAMPLES).min(total);
            eval(idx, start..end)
        })
        .collect();
    let mut iter = partials.into_iter();
    let mut first = iter.next()?;
    for part in iter {
        merge(&mut first, part);
    }
    Some(first)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_matches_two_pass() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 113) as f64 * 0.01 - 0.5).collect();
        let mut m = Moments::default();
        for &x in &xs {
            m.push(x);
        }
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!((m.mean - mean).abs() < 1e-12);
        assert!((m.variance() - var).abs() < 1e-12);
    }

    #[test]
    fn merge_equals_sequential() {
        let xs: Vec<f64> = (0..500).map(|i| (i as f64).sin()).collect();
        let mut whole = Moments::default();
        for &x in &xs {
            whole.push(x);
        }
        let mut left = Moments::default();
        let mut right = Moments::default();
        for &x in &xs[..200] {
            left.push(x);
        }
        for &x in &xs[200..] {
            right.push(x);
        }
        left.merge(&right);
        assert!((left.mean - whole.mean).abs() < 1e-12);
        assert!((left.variance() - whole.variance()).abs() < 1e-12);
        assert_eq!(left.count, whole.count);
    }

    #[test]
    fn chunked_reduction_is_thread_count_invariant() {
        let eval = |idx: u64, range: std::ops::Range<u64>| {
            let mut m = Moments::default();
            for i in range {
                m.push(((i ^ idx) as f64 * 0.001).fract());
            }
            m
        };
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                run_chunked(200_000, eval, |a, b| a.merge(&b)).unwrap()
            })
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.variance().to_bits(), b.variance().to_bits());
    }

    #[test]
    fn histogram_edges() {
        let mut h = Histogram::new(-1.0, 1.0, 4);
        for x in [-1.5, -1.0, -0.4, 0.0, 0.6, 0.9999, 1.0] {
            h.push(x);
        }
        assert_eq!(h.underflow, 1);
        assert_eq!(h.overflow, 1);
        assert_eq!(h.bins.iter().sum::<u64>(), 5);
    }
}
