use serde::{Deserialize, Serialize};

use super::DenseTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative at the pre-activation value `x`.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    /// Variance scale `p_a` used when planning: 1/2 for ReLU, 1 otherwise.
    pub fn scale(self) -> f64 {
        match self {
            Activation::Relu => 0.5,
            Activation::Tanh | Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }
}

pub fn apply_activation(x: &DenseTensor, kind: Activation) -> DenseTensor {
    match kind {
        Activation::Identity => x.clone(),
        _ => x.map(|v| kind.apply(v)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn identity_and_relu() {
        let x = DenseTensor::vector(&[-1.0, 0.0, 2.0]);
        assert_eq!(apply_activation(&x, Activation::Identity), x);
        assert_eq!(apply_activation(&x, Activation::Relu).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn tanh_keeps_zero_mean() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let normal = Normal::new(0.0, 1.5).unwrap();
        let values: Vec<f64> = (0..100_000).map(|_| normal.sample(&mut rng)).collect();
        let x = DenseTensor::vector(&values);
        let y = apply_activation(&x, Activation::Tanh);
        let mean = y.data().iter().sum::<f64>() / y.len() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn derivatives_match_central_differences() {
        for act in [Activation::Tanh, Activation::Relu, Activation::Identity] {
            for x in [-1.3, -0.2, 0.4, 2.1] {
                let h = 1e-6;
                let fd = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                assert!((fd - act.derivative(x)).abs() < 1e-8);
            }
        }
    }
}
