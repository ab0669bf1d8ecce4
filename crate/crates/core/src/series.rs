//! Data series, z-normalization, Euclidean distance and the random-walk
//! generator used for synthetic workloads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default series length.
pub const DEFAULT_LENGTH: usize = 256;

/// A fixed-length sequence of samples, positions implied by index.
///
/// `timestamp` is the insertion sequence number (1-based); 0 means unset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSeries {
    pub values: Vec<f64>,
    pub timestamp: u64,
}

impl DataSeries {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, timestamp: 0 }
    }

    pub fn with_timestamp(values: Vec<f64>, timestamp: u64) -> Self {
        Self { values, timestamp }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Population standard deviation.
    pub fn stddev(&self) -> f64 {
        let mean = self.mean();
        let var = self.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / self.values.len() as f64;
        var.sqrt()
    }
}

/// Result of [`z_normalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub series: DataSeries,
    /// All samples were equal; `series` is all zeros.
    pub constant: bool,
}

/// Subtracts the mean and divides by the population standard deviation.
///
/// A constant input yields the all-zeros series with `constant` set.
pub fn z_normalize(series: &DataSeries) -> Result<Normalized> {
    let n = series.len();
    if n < 2 {
        return Err(Error::TooShort(n));
    }
    let mean = series.mean();
    let std = series.stddev();
    if std == 0.0 || !std.is_finite() {
        return Ok(Normalized {
            series: DataSeries::with_timestamp(vec![0.0; n], series.timestamp),
            constant: true,
        });
    }
    let values = series.values.iter().map(|v| (v - mean) / std).collect();
    Ok(Normalized { series: DataSeries::with_timestamp(values, series.timestamp), constant: false })
}

/// Squared Euclidean distance over equal-length slices.
#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn euclidean_distance(a: &DataSeries, b: &DataSeries) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { expected: a.len(), actual: b.len() });
    }
    Ok(squared_distance(&a.values, &b.values).sqrt())
}

/// A nearest-neighbor query: a normalized series plus an optional window
/// over the most recent `window` insertions.
#[derive(Debug, Clone)]
pub struct Query {
    pub series: DataSeries,
    pub window: Option<u64>,
}

impl Query {
    /// Wraps an already-normalized series.
    pub fn new(series: DataSeries) -> Self {
        Self { series, window: None }
    }

    /// Normalizes `raw` once, at query ingestion.
    pub fn normalized(raw: &DataSeries) -> Result<Self> {
        Ok(Self::new(z_normalize(raw)?.series))
    }

    pub fn with_window(mut self, window: u64) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        self.window = Some(window);
        Ok(self)
    }
}

/// Deterministic random-walk generator.
///
/// Every series is a cumulative sum of i.i.d. N(0,1) steps, z-normalized,
/// then rounded to `f32` so that what is generated is exactly what the raw
/// file stores. Timestamps run 1..=count in generation order.
pub struct RandomWalk {
    rng: ChaCha8Rng,
    length: usize,
    remaining: usize,
    next_timestamp: u64,
}

impl RandomWalk {
    pub fn new(count: usize, length: usize, seed: u64) -> Result<Self> {
        if count < 1 {
            return Err(Error::Config("count must be at least 1".into()));
        }
        if length < 2 {
            return Err(Error::Config("series length must be at least 2".into()));
        }
        Ok(Self { rng: ChaCha8Rng::seed_from_u64(seed), length, remaining: count, next_timestamp: 1 })
    }

    /// Continue numbering timestamps from `first` instead of 1.
    pub fn starting_at(mut self, first: u64) -> Self {
        self.next_timestamp = first;
        self
    }
}

impl Iterator for RandomWalk {
    type Item = DataSeries;

    fn next(&mut self) -> Option<DataSeries> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let mut acc = 0.0f64;
        let walk: Vec<f64> = (0..self.length)
            .map(|_| {
                let step: f64 = StandardNormal.sample(&mut self.rng);
                acc += step;
                acc
            })
            .collect();
        let norm = z_normalize(&DataSeries::new(walk)).expect("length >= 2");
        let values = norm.series.values.into_iter().map(|v| v as f32 as f64).collect();
        let ts = self.next_timestamp;
        self.next_timestamp += 1;
        Some(DataSeries::with_timestamp(values, ts))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

pub fn random_walk_generate(count: usize, length: usize, seed: u64) -> Result<RandomWalk> {
    RandomWalk::new(count, length, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_series_flags_and_zeroes() {
        let out = z_normalize(&DataSeries::new(vec![0.0; 4])).unwrap();
        assert!(out.constant);
        assert_eq!(out.series.values, vec![0.0; 4]);
        let out = z_normalize(&DataSeries::new(vec![7.5; 9])).unwrap();
        assert!(out.constant);
    }

    #[test]
    fn normalizes_one_to_four() {
        // mean 2.5, population stddev sqrt(1.25)
        let out = z_normalize(&DataSeries::new(vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        let s = 1.25f64.sqrt();
        let expected = [-1.5 / s, -0.5 / s, 0.5 / s, 1.5 / s];
        for (a, b) in out.series.values.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((out.series.values[0] + 1.3416).abs() < 1e-4);
    }

    #[test]
    fn too_short_is_rejected() {
        assert!(matches!(z_normalize(&DataSeries::new(vec![1.0])), Err(Error::TooShort(1))));
    }

    #[test]
    fn distance_basics() {
        let a = DataSeries::new(vec![0.0, 0.0]);
        let b = DataSeries::new(vec![3.0, 4.0]);
        assert_eq!(euclidean_distance(&a, &b).unwrap(), 5.0);
        assert_eq!(euclidean_distance(&a, &a).unwrap(), 0.0);
        let c = DataSeries::new(vec![1.0]);
        assert!(matches!(euclidean_distance(&a, &c), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn distance_matches_scalar_loop() {
        let mut walk = RandomWalk::new(2, 256, 11).unwrap();
        let a = walk.next().unwrap();
        let b = walk.next().unwrap();
        let mut acc = 0.0;
        for i in 0..256 {
            let d = a.values[i] - b.values[i];
            acc += d * d;
        }
        assert!((euclidean_distance(&a, &b).unwrap() - acc.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn generator_shape_and_normalization() {
        let all: Vec<_> = RandomWalk::new(10, 256, 3).unwrap().collect();
        assert_eq!(all.len(), 10);
        for (i, s) in all.iter().enumerate() {
            assert_eq!(s.len(), 256);
            assert_eq!(s.timestamp, i as u64 + 1);
            assert!(s.mean().abs() <= 1e-6);
            assert!((s.stddev() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let a: Vec<_> = RandomWalk::new(5, 64, 99).unwrap().collect();
        let b: Vec<_> = RandomWalk::new(5, 64, 99).unwrap().collect();
        let c: Vec<_> = RandomWalk::new(5, 64, 100).unwrap().collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bits = |v: &[DataSeries]| v.iter().flat_map(|s| s.values.iter().map(|x| x.to_bits())).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn generator_values_are_bell_shaped() {
        // Coarse histogram of per-point values: unimodal, centered, symmetric.
        let mut bins = [0usize; 8];
        let edges = [-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0];
        let mut total = 0usize;
        for s in RandomWalk::new(2000, 256, 5).unwrap() {
            for v in s.values {
                bins[edges.partition_point(|e| *e <= v)] += 1;
                total += 1;
            }
        }
        let frac: Vec<f64> = bins.iter().map(|b| *b as f64 / total as f64).collect();
        assert!(frac[3] > frac[2] && frac[2] > frac[1] && frac[1] >= frac[0]);
        assert!(frac[4] > frac[5] && frac[5] > frac[6] && frac[6] >= frac[7]);
        assert!((frac[3] - frac[4]).abs() < 0.02);
        assert!(frac[3] + frac[4] > 0.5);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn series(len: usize) -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(-100.0f64..100.0, len)
        }

        proptest! {
            #[test]
            fn normalize_is_idempotent(v in series(32)) {
                let once = z_normalize(&DataSeries::new(v)).unwrap();
                prop_assume!(!once.constant);
                let twice = z_normalize(&once.series).unwrap();
                for (a, b) in once.series.values.iter().zip(&twice.series.values) {
                    prop_assert!((a - b).abs() <= 1e-9);
                }
                prop_assert!(once.series.mean().abs() <= 1e-6);
                prop_assert!((once.series.stddev() - 1.0).abs() <= 1e-6);
            }

            #[test]
            fn triangle_inequality(a in series(16), b in series(16), c in series(16)) {
                let (a, b, c) = (DataSeries::new(a), DataSeries::new(b), DataSeries::new(c));
                let ab = euclidean_distance(&a, &b).unwrap();
                let bc = euclidean_distance(&b, &c).unwrap();
                let ac = euclidean_distance(&a, &c).unwrap();
                prop_assert!(ac <= ab + bc + 1e-9);
                prop_assert!((ab - euclidean_distance(&b, &a).unwrap()).abs() == 0.0);
            }
        }
    }
}
