use super::DenseTensor;
use crate::error::{Error, Result};

/// Contracts `a` and `b` over the paired axes `axes_a[t]` ↔ `axes_b[t]`.
///
/// The result keeps the free axes of `a` followed by the free axes of `b`,
/// each in their original order.
pub fn contract(a: &DenseTensor, axes_a: &[usize], b: &DenseTensor, axes_b: &[usize]) -> Result<DenseTensor> {
    if axes_a.len() != axes_b.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} axes of the first operand paired with {} of the second",
            axes_a.len(),
            axes_b.len()
        )));
    }
    check_axes(axes_a, a.rank())?;
    check_axes(axes_b, b.rank())?;
    for (&x, &y) in axes_a.iter().zip(axes_b) {
        if a.shape()[x] != b.shape()[y] {
            return Err(Error::DimensionMismatch(format!(
                "axis {x} has size {} but paired axis {y} has size {}",
                a.shape()[x],
                b.shape()[y]
            )));
        }
    }
    Ok(contract_batched(a, &[], axes_a, b, &[], axes_b))
}

fn check_axes(axes: &[usize], rank: usize) -> Result<()> {
    let mut seen = vec![false; rank];
    for &axis in axes {
        if axis >= rank {
            return Err(Error::AxisOutOfRange { axis, rank });
        }
        if std::mem::replace(&mut seen[axis], true) {
            return Err(Error::DuplicateAxis(axis));
        }
    }
    Ok(())
}

/// Pairwise contraction with shared batch axes.
///
/// Output layout: batch axes (in `a_batch` order), free axes of `a`, free axes
/// of `b`. Callers guarantee the axis lists are valid and sizes agree.
pub(crate) fn contract_batched(
    a: &DenseTensor,
    a_batch: &[usize],
    a_sum: &[usize],
    b: &DenseTensor,
    b_batch: &[usize],
    b_sum: &[usize],
) -> DenseTensor {
    let a_free: Vec<usize> = (0..a.rank())
        .filter(|x| !a_batch.contains(x) && !a_sum.contains(x))
        .collect();
    let b_free: Vec<usize> = (0..b.rank())
        .filter(|x| !b_batch.contains(x) && !b_sum.contains(x))
        .collect();

    let dims = |t: &DenseTensor, axes: &[usize]| -> usize { axes.iter().map(|&x| t.shape()[x]).product() };
    let batch = dims(a, a_batch);
    let m = dims(a, &a_free);
    let k = dims(a, a_sum);
    let n = dims(b, &b_free);

    let a_order: Vec<usize> = a_batch.iter().chain(&a_free).chain(a_sum).copied().collect();
    let b_order: Vec<usize> = b_batch.iter().chain(b_sum).chain(&b_free).copied().collect();
    let ap = a.permute_unchecked(&a_order);
    let bp = b.permute_unchecked(&b_order);

    let mut out = vec![0.0; batch * m * n];
    for t in 0..batch {
        let lhs = &ap.data()[t * m * k..(t + 1) * m * k];
        let rhs = &bp.data()[t * k * n..(t + 1) * k * n];
        let dst = &mut out[t * m * n..(t + 1) * m * n];
        // SAFETY: slices are exactly m*k, k*n and m*n long with the row-major
        // strides passed below.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                lhs.as_ptr(),
                k as isize,
                1,
                rhs.as_ptr(),
                n as isize,
                1,
                0.0,
                dst.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }

    let shape: Vec<usize> = a_batch
        .iter()
        .chain(&a_free)
        .map(|&x| a.shape()[x])
        .chain(b_free.iter().map(|&x| b.shape()[x]))
        .collect();
    DenseTensor::new(shape, out).expect("contraction output length")
}
