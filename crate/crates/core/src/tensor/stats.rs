use serde::{Deserialize, Serialize};

use super::DenseTensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensorStats {
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    /// Share of elements with `|x| > threshold`.
    pub saturation_fraction: f64,
}

pub fn tensor_stats(x: &DenseTensor, threshold: f64) -> Result<TensorStats> {
    let mut acc = RunningStats::new(threshold);
    acc.push_all(x.data());
    acc.finish().ok_or(Error::EmptyTensor)
}

/// Order-dependent accumulator; merging in a fixed order keeps results
/// bit-identical across runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunningStats {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
    pub saturated: u64,
    pub threshold: f64,
}

impl RunningStats {
    pub fn new(threshold: f64) -> Self {
        Self {
            count: 0,
            sum: 0.0,
            sum_sq: 0.0,
            saturated: 0,
            threshold,
        }
    }

    pub fn push_all(&mut self, values: &[f64]) {
        for &v in values {
            self.sum += v;
            self.sum_sq += v * v;
            if v.abs() > self.threshold {
                self.saturated += 1;
            }
        }
        self.count += values.len() as u64;
    }

    pub fn merge(&mut self, other: &RunningStats) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        self.saturated += other.saturated;
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }

    pub fn variance(&self) -> f64 {
        let n = self.count as f64;
        let m = self.sum / n;
        (self.sum_sq / n - m * m).max(0.0)
    }

    pub fn second_moment(&self) -> f64 {
        self.sum_sq / self.count as f64
    }

    pub fn finish(&self) -> Option<TensorStats> {
        (self.count > 0).then(|| TensorStats {
            mean: self.mean(),
            variance: self.variance(),
            saturation_fraction: self.saturated as f64 / self.count as f64,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_has_zero_variance() {
        let s = tensor_stats(&DenseTensor::filled(&[3, 4], 2.5), 0.99).unwrap();
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.variance, 0.0);
        assert_eq!(s.saturation_fraction, 1.0);
    }

    #[test]
    fn plus_minus_one() {
        let s = tensor_stats(&DenseTensor::vector(&[-1.0, 1.0]), 0.99).unwrap();
        assert_eq!(s.mean, 0.0);
        assert_eq!(s.variance, 1.0);
    }

    #[test]
    fn zeros_are_unsaturated() {
        let s = tensor_stats(&DenseTensor::zeros(&[10]), 0.99).unwrap();
        assert_eq!(s.saturation_fraction, 0.0);
    }

    #[test]
    fn empty_accumulator() {
        assert!(RunningStats::new(0.99).finish().is_none());
    }
}
