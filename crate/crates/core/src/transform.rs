//! Backward pass in convolution form.
//!
//! The gradient of a strided, padded convolution with respect to its input
//! is itself a stride-1 convolution: spread the output gradient `s` apart
//! with the transformation matrix, flip the kernel with the reversal matrix
//! and pad by `beta - padding - 1`. The dummy tensor of the forward window
//! factors exactly through these pieces, which
//! [`verify_backward_factorization`] checks entry by entry.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{EdgeKind, LayerFormat, VertexKind, Window};
use crate::tensor::{build_dummy, contract, reversal_matrix, transformation_matrix, DenseTensor, DummySpec};

/// Window of the transformed backward convolution.
///
/// Reads the expanded gradient of length `alpha_tilde` with stride 1 and
/// padding `padding`, producing the input-gradient of length `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BackwardDummySpec {
    pub forward: DummySpec,
    pub alpha: usize,
    pub alpha_tilde: usize,
    pub beta: usize,
    pub stride: usize,
    pub padding: usize,
}

impl BackwardDummySpec {
    /// Expanded-gradient position read by output `j` at reversed tap `k`.
    pub fn source(&self, j: usize, k: usize) -> Option<usize> {
        (j + k).checked_sub(self.padding).filter(|&t| t < self.alpha_tilde)
    }
}

pub fn backward_dummy(fwd: &DummySpec) -> Result<BackwardDummySpec> {
    fwd.validate()?;
    if fwd.padding + 1 > fwd.beta {
        return Err(Error::InvalidPadding {
            padding: fwd.padding,
            beta: fwd.beta,
        });
    }
    Ok(BackwardDummySpec {
        forward: *fwd,
        alpha: fwd.alpha,
        alpha_tilde: fwd.stride * (fwd.alpha_prime() - 1) + 1,
        beta: fwd.beta,
        stride: 1,
        padding: fwd.beta - fwd.padding - 1,
    })
}

/// Binary tensor of shape `[alpha, alpha_tilde, beta]`.
///
/// The output length is pinned to `alpha` rather than recomputed from the
/// floor formula, which would drop trailing positions when `alpha` is not
/// reached by the last forward window.
pub fn build_backward_dummy(spec: &BackwardDummySpec) -> DenseTensor {
    let (a, at, b) = (spec.alpha, spec.alpha_tilde, spec.beta);
    let mut p = DenseTensor::zeros(&[a, at, b]);
    let data = p.data_mut();
    for j in 0..a {
        for k in 0..b {
            if let Some(t) = spec.source(j, k) {
                data[(j * at + t) * b + k] = 1.0;
            }
        }
    }
    p
}

/// Checks that the forward dummy equals the backward dummy contracted with
/// the transformation matrix on its gradient mode and the reversal matrix on
/// its kernel mode, with exact equality.
pub fn verify_backward_factorization(fwd: &DummySpec) -> bool {
    let (Ok(p), Ok(back)) = (build_dummy(fwd), backward_dummy(fwd)) else {
        return false;
    };
    let pb = build_backward_dummy(&back);
    let t = transformation_matrix(fwd.alpha_prime(), fwd.stride);
    let r = reversal_matrix(fwd.beta);
    // [alpha, alpha_tilde, beta] x T[alpha', alpha_tilde] -> [alpha, beta, alpha']
    let Ok(pt) = contract(&pb, &[1], &t, &[1]) else {
        return false;
    };
    // -> [alpha, alpha', beta]
    match contract(&pt, &[1], &r, &[0]) {
        Ok(rebuilt) => rebuilt == p,
        Err(_) => false,
    }
}

/// Gradient of `y = a ⊛ kernel` with respect to `a`, computed as the
/// stride-1 convolution of the expanded `dy` with the reversed kernel.
pub fn conv_input_gradient(dy: &DenseTensor, kernel: &DenseTensor, fwd: &DummySpec) -> Result<DenseTensor> {
    let back = backward_dummy(fwd)?;
    if dy.shape() != [fwd.alpha_prime()] || kernel.shape() != [fwd.beta] {
        return Err(Error::DimensionMismatch(format!(
            "gradient {:?} and kernel {:?} do not fit window {fwd:?}",
            dy.shape(),
            kernel.shape()
        )));
    }
    let expanded = contract(dy, &[0], &transformation_matrix(fwd.alpha_prime(), fwd.stride), &[0])?;
    let reversed = contract(kernel, &[0], &reversal_matrix(fwd.beta), &[0])?;
    let pb = build_backward_dummy(&back);
    let partial = contract(&expanded, &[0], &pb, &[1])?;
    contract(&partial, &[1], &reversed, &[0])
}

/// Rewrites a layer into the format of its backward pass.
///
/// The input vertex now carries the output gradient: input and output
/// channel edges trade kinds and the input vertex moves to the former output
/// channels. Kernel windows switch between forward and backward windows, so
/// applying the rewrite twice restores the original.
pub fn build_backward_format(f: &LayerFormat) -> Result<LayerFormat> {
    f.validate()?;
    let input = f.input_vertex().id.clone();
    let mut edges = Vec::with_capacity(f.edges.len());
    for e in &f.edges {
        let mut e = e.clone();
        match e.kind {
            EdgeKind::InputChannel => {
                e.kind = EdgeKind::OutputChannel;
                e.endpoints.retain(|p| *p != input);
            }
            EdgeKind::OutputChannel => {
                e.kind = EdgeKind::InputChannel;
                e.endpoints.insert(0, input.clone());
            }
            EdgeKind::Rank => {}
            EdgeKind::KernelWindow(Window::Forward(s)) => {
                e.kind = EdgeKind::KernelWindow(Window::Backward(backward_dummy(&s)?));
            }
            EdgeKind::KernelWindow(Window::Backward(b)) => {
                e.kind = EdgeKind::KernelWindow(Window::Forward(b.forward));
            }
        }
        edges.push(e);
    }
    debug_assert_eq!(f.vertices.iter().filter(|v| v.kind == VertexKind::Input).count(), 1);
    LayerFormat::new(f.vertices.clone(), edges, f.phi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(a: &[f64], b: &[f64], s: usize, p: usize) -> Vec<f64> {
        let spec = DummySpec::new(a.len(), b.len(), s, p).unwrap();
        (0..spec.alpha_prime())
            .map(|jp| {
                (0..b.len())
                    .filter_map(|k| spec.source(jp, k).map(|j| a[j] * b[k]))
                    .sum()
            })
            .collect()
    }

    #[test]
    fn backward_spec_values() {
        let b = backward_dummy(&DummySpec::new(6, 3, 1, 0).unwrap()).unwrap();
        assert_eq!((b.stride, b.padding), (1, 2));
        // alpha' = 3 at stride 2
        let f = DummySpec::new(7, 3, 2, 0).unwrap();
        assert_eq!(f.alpha_prime(), 3);
        assert_eq!(backward_dummy(&f).unwrap().alpha_tilde, 5);
        assert_eq!(backward_dummy(&DummySpec::new(6, 3, 1, 2).unwrap()).unwrap().padding, 0);
        assert_eq!(
            backward_dummy(&DummySpec::new(6, 3, 1, 3).unwrap()),
            Err(Error::InvalidPadding { padding: 3, beta: 3 })
        );
    }

    #[test]
    fn identity_holds_on_grid() {
        for alpha in 3..=12 {
            for beta in 1..=5 {
                for stride in 1..=3 {
                    for padding in 0..beta {
                        if let Ok(spec) = DummySpec::new(alpha, beta, stride, padding) {
                            assert!(verify_backward_factorization(&spec), "{spec:?}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn identity_detects_wrong_padding() {
        assert!(!verify_backward_factorization(&DummySpec::new(6, 2, 1, 3).unwrap()));
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let a: Vec<f64> = (0..8).map(|i| (i as f64 * 1.3).sin()).collect();
        let b = [0.7, -1.1, 0.4];
        let spec = DummySpec::new(8, 3, 2, 1).unwrap();
        let g: Vec<f64> = (0..spec.alpha_prime()).map(|i| (i as f64 * 0.9 + 0.2).cos()).collect();
        let loss = |a: &[f64]| -> f64 { conv(a, &b, 2, 1).iter().zip(&g).map(|(y, w)| y * w).sum() };

        let grad = conv_input_gradient(&DenseTensor::vector(&g), &DenseTensor::vector(&b), &spec).unwrap();
        let h = 1e-5;
        for j in 0..8 {
            let (mut up, mut down) = (a.clone(), a.clone());
            up[j] += h;
            down[j] -= h;
            let fd = (loss(&up) - loss(&down)) / (2.0 * h);
            let got = grad.data()[j];
            assert!((got - fd).abs() <= 1e-6 * fd.abs().max(1.0), "{j}: {got} vs {fd}");
        }
    }
}
