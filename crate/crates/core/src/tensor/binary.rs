use serde::{Deserialize, Serialize};

use super::DenseTensor;
use crate::error::{Error, Result};

/// Index pattern of a one-dimensional convolution window.
///
/// `alpha` is the input length, `beta` the kernel length. The output length
/// is `floor((alpha + 2 * padding - beta) / stride) + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DummySpec {
    pub alpha: usize,
    pub beta: usize,
    pub stride: usize,
    pub padding: usize,
}

impl DummySpec {
    pub fn new(alpha: usize, beta: usize, stride: usize, padding: usize) -> Result<Self> {
        let spec = Self {
            alpha,
            beta,
            stride,
            padding,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha == 0 || self.beta == 0 || self.stride == 0 {
            return Err(Error::InvalidDummySpec(format!(
                "alpha, beta and stride must be positive (got {}, {}, {})",
                self.alpha, self.beta, self.stride
            )));
        }
        if self.alpha + 2 * self.padding < self.beta {
            return Err(Error::InvalidDummySpec(format!(
                "kernel of length {} does not fit input {} with padding {}",
                self.beta, self.alpha, self.padding
            )));
        }
        Ok(())
    }

    pub fn alpha_prime(&self) -> usize {
        (self.alpha + 2 * self.padding - self.beta) / self.stride + 1
    }

    /// Input position read by output `j_out` at kernel tap `k`, if inside the input.
    pub fn source(&self, j_out: usize, k: usize) -> Option<usize> {
        (self.stride * j_out + k)
            .checked_sub(self.padding)
            .filter(|&j| j < self.alpha)
    }
}

/// Binary tensor of shape `[alpha, alpha_prime, beta]` with a one exactly at
/// `j = stride * j' + k - padding`.
pub fn build_dummy(spec: &DummySpec) -> Result<DenseTensor> {
    spec.validate()?;
    let (a, ap, b) = (spec.alpha, spec.alpha_prime(), spec.beta);
    let mut p = DenseTensor::zeros(&[a, ap, b]);
    let data = p.data_mut();
    for jp in 0..ap {
        for k in 0..b {
            if let Some(j) = spec.source(jp, k) {
                data[(j * ap + jp) * b + k] = 1.0;
            }
        }
    }
    Ok(p)
}

/// Anti-diagonal `r × r` matrix.
pub fn reversal_matrix(r: usize) -> DenseTensor {
    assert!(r >= 1, "reversal matrix needs r >= 1");
    DenseTensor::from_fn(&[r, r], |i| if i[0] + i[1] == r - 1 { 1.0 } else { 0.0 })
}

/// `t × (epsilon (t - 1) + 1)` matrix with ones at `j = epsilon * i`.
///
/// Right-multiplying a length-`t` vector spreads its entries `epsilon` apart
/// with zeros in between.
pub fn transformation_matrix(t: usize, epsilon: usize) -> DenseTensor {
    assert!(t >= 1 && epsilon >= 1, "transformation matrix needs t, epsilon >= 1");
    let wide = epsilon * (t - 1) + 1;
    DenseTensor::from_fn(&[t, wide], |i| if i[1] == epsilon * i[0] { 1.0 } else { 0.0 })
}
