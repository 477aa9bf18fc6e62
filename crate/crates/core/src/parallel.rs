//! Reproducible Monte Carlo execution.
//!
//! Every replication owns its own ChaCha8 stream, selected by the stream id
//! `replication_index` under the master seed. Replications are grouped in
//! fixed-size chunks; chunk results are reduced in chunk order, so the output
//! is bitwise identical for any worker count and for both execution modes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Replications per chunk when the caller does not choose one.
pub const DEFAULT_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    /// Falls back to sequential when the `parallel` feature is disabled.
    #[default]
    Parallel,
}

/// Random stream for a single replication.
pub fn replication_rng(master_seed: u64, replication: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replication);
    rng
}

/// Seeds an auxiliary stream that must not collide with replication streams.
pub fn derived_seed(master_seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = master_seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Running mean and centred second moment (Welford updates, Chan merges),
/// so constant samples give an exactly zero spread.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanAccumulator {
    pub count: u64,
    mean: f64,
    m2: f64,
    pub nonzero: u64,
}

impl MeanAccumulator {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
        if x != 0.0 {
            self.nonzero += 1;
        }
    }

    pub fn merge(&mut self, other: &MeanAccumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let d = other.mean - self.mean;
        self.mean += d * nb / n;
        self.m2 += other.m2 + d * d * na * nb / n;
        self.count += other.count;
        self.nonzero += other.nonzero;
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            return f64::NAN;
        }
        self.mean
    }

    pub fn sum(&self) -> f64 {
        self.mean * self.count as f64
    }

    /// Sample standard deviation divided by sqrt(count).
    pub fn stderr(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        ((self.m2 / (n - 1.0)).max(0.0) / n).sqrt()
    }
}

/// Runs `per_rep` for replications `0..reps`, chunked by `chunk`, and
/// reduces the per-chunk accumulators in order.
pub fn run_replications<F>(
    reps: u64,
    chunk: usize,
    master_seed: u64,
    exec: Execution,
    per_rep: F,
) -> MeanAccumulator
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    let chunk = chunk.max(1) as u64;
    let n_chunks = reps.div_ceil(chunk);
    let run_chunk = |c: u64| {
        let mut acc = MeanAccumulator::default();
        let start = c * chunk;
        let end = (start + chunk).min(reps);
        for r in start..end {
            let mut rng = replication_rng(master_seed, r);
            acc.push(per_rep(&mut rng));
        }
        acc
    };
    let partials = map_indices(n_chunks, exec, run_chunk);
    let mut total = MeanAccumulator::default();
    for p in &partials {
        total.merge(p);
    }
    total
}

/// Applies `f` to `0..n` and returns the results in index order.
pub fn map_indices<T, F>(n: u64, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(&f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Maps a slice in order, in parallel when enabled.
pub fn map_slice<A, T, F>(items: &[A], exec: Execution, f: F) -> Vec<T>
where
    A: Sync,
    T: Send,
    F: Fn(&A) -> T + Sync,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(&f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

/// Neumaier compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn replications_independent_of_chunking_and_mode() {
        let f = |rng: &mut ChaCha8Rng| rng.random::<f64>();
        let a = run_replications(10_000, 7, 42, Execution::Sequential, f);
        let b = run_replications(10_000, 4096, 42, Execution::Parallel, f);
        assert_eq!(a.count, b.count);
        // chunk boundaries change summation order only
        assert!((a.mean() - b.mean()).abs() < 1e-12);
        let c = run_replications(10_000, 7, 42, Execution::Parallel, f);
        assert_eq!(a, c);
    }

    #[test]
    fn streams_differ() {
        let mut a = replication_rng(1, 0);
        let mut b = replication_rng(1, 1);
        assert_ne!(a.random::<u64>(), b.random::<u64>());
        let mut a2 = replication_rng(1, 0);
        let mut a3 = replication_rng(1, 0);
        assert_eq!(a2.random::<u64>(), a3.random::<u64>());
    }

    #[test]
    fn compensated_sum_recovers_cancellation() {
        let mut s = CompensatedSum::default();
        for x in [1e30, 1.0, -1e30, 1.0] {
            s.add(x);
        }
        assert_eq!(s.value(), 2.0);
    }
}
