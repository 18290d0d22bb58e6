use std::borrow::Cow;

use super::{contract_batched, DenseTensor};
use crate::error::{Error, Result};

/// `(tensor index, axis)` within a contraction network.
pub type AxisRef = (usize, usize);

/// Contracts a whole network in one call.
///
/// Every axis of every tensor must appear in exactly one entry of `groups`
/// (a shared summation index, possibly joining more than two tensors) or of
/// `open` (kept in the output, in the listed order). A group with a single
/// member sums that axis out.
///
/// Contraction order is greedy: the pair of tensors sharing an index with
/// the smallest intermediate result goes first.
pub fn multi_contract(tensors: &[&DenseTensor], groups: &[Vec<AxisRef>], open: &[AxisRef]) -> Result<DenseTensor> {
    if tensors.is_empty() {
        return Err(Error::DimensionMismatch("network has no tensors".into()));
    }
    let n_labels = groups.len() + open.len();
    let mut labels: Vec<Vec<Option<usize>>> = tensors.iter().map(|t| vec![None; t.rank()]).collect();
    let mut label_dim = vec![0usize; n_labels];

    let members = groups
        .iter()
        .enumerate()
        .flat_map(|(g, members)| members.iter().map(move |m| (g, *m)))
        .chain(open.iter().enumerate().map(|(i, m)| (groups.len() + i, *m)));
    for (label, (t, axis)) in members {
        let tensor = tensors
            .get(t)
            .ok_or_else(|| Error::DimensionMismatch(format!("network references tensor {t} of {}", tensors.len())))?;
        if axis >= tensor.rank() {
            return Err(Error::AxisOutOfRange {
                axis,
                rank: tensor.rank(),
            });
        }
        if labels[t][axis].is_some() {
            return Err(Error::DuplicateAxis(axis));
        }
        if labels[t].contains(&Some(label)) {
            return Err(Error::DimensionMismatch(format!(
                "index {label} joins two axes of tensor {t}"
            )));
        }
        let dim = tensor.shape()[axis];
        if label_dim[label] != 0 && label_dim[label] != dim {
            return Err(Error::DimensionMismatch(format!(
                "index {label} joins axes of size {} and {dim}",
                label_dim[label]
            )));
        }
        label_dim[label] = dim;
        labels[t][axis] = Some(label);
    }

    let mut work: Vec<(Cow<'_, DenseTensor>, Vec<usize>)> = Vec::with_capacity(tensors.len());
    for (t, (tensor, axes)) in tensors.iter().zip(labels).enumerate() {
        let axes = axes
            .into_iter()
            .enumerate()
            .map(|(axis, l)| l.ok_or(Error::UnboundAxis { tensor: t, axis }))
            .collect::<Result<Vec<_>>>()?;
        work.push((Cow::Borrowed(*tensor), axes));
    }

    let is_open = |l: usize| l >= groups.len();
    let mut count = vec![0usize; n_labels];
    for (_, ls) in &work {
        for &l in ls {
            count[l] += 1;
        }
    }
    for item in work.iter_mut() {
        sum_lonely(item, &count, &is_open);
    }

    while work.len() > 1 {
        let (i, j) = pick_pair(&work, &label_dim);
        let (tb, lb) = work.remove(j);
        let (ta, la) = work.remove(i);
        let mut a_batch = Vec::new();
        let mut b_batch = Vec::new();
        let mut a_sum = Vec::new();
        let mut b_sum = Vec::new();
        let mut batch_labels = Vec::new();
        for (x, &l) in la.iter().enumerate() {
            if let Some(y) = lb.iter().position(|&m| m == l) {
                if is_open(l) || count[l] > 2 {
                    a_batch.push(x);
                    b_batch.push(y);
                    batch_labels.push(l);
                    count[l] -= 1;
                } else {
                    a_sum.push(x);
                    b_sum.push(y);
                    count[l] = 0;
                }
            }
        }
        let out = contract_batched(&ta, &a_batch, &a_sum, &tb, &b_batch, &b_sum);
        let out_labels: Vec<usize> = batch_labels
            .iter()
            .copied()
            .chain(la.iter().copied().filter(|l| !lb.contains(l)))
            .chain(lb.iter().copied().filter(|l| !la.contains(l)))
            .collect();
        let mut item = (Cow::Owned(out), out_labels);
        sum_lonely(&mut item, &count, &is_open);
        work.push(item);
    }

    let (tensor, ls) = work.pop().expect("one tensor left");
    let order: Vec<usize> = (0..open.len())
        .map(|i| {
            ls.iter()
                .position(|&l| l == groups.len() + i)
                .expect("open index survives contraction")
        })
        .collect();
    debug_assert_eq!(order.len(), ls.len());
    Ok(tensor.permute_unchecked(&order))
}

/// Sums out indices that no other tensor shares and that are not open.
fn sum_lonely(item: &mut (Cow<'_, DenseTensor>, Vec<usize>), count: &[usize], is_open: &impl Fn(usize) -> bool) {
    let (tensor, ls) = item;
    let sum_axes: Vec<usize> = (0..ls.len())
        .filter(|&x| count[ls[x]] == 1 && !is_open(ls[x]))
        .collect();
    if sum_axes.is_empty() {
        return;
    }
    let keep: Vec<usize> = (0..ls.len()).filter(|x| !sum_axes.contains(x)).collect();
    let order: Vec<usize> = keep.iter().chain(&sum_axes).copied().collect();
    let p = tensor.permute_unchecked(&order);
    let chunk: usize = sum_axes.iter().map(|&x| tensor.shape()[x]).product();
    let data: Vec<f64> = p.data().chunks(chunk).map(|c| c.iter().sum()).collect();
    let shape: Vec<usize> = keep.iter().map(|&x| tensor.shape()[x]).collect();
    *tensor = Cow::Owned(DenseTensor::new(shape, data).expect("summed shape"));
    *ls = keep.iter().map(|&x| ls[x]).collect();
}

fn pick_pair(work: &[(Cow<'_, DenseTensor>, Vec<usize>)], label_dim: &[usize]) -> (usize, usize) {
    let mut best = (true, f64::INFINITY, 0, 1);
    for i in 0..work.len() {
        for j in i + 1..work.len() {
            let (la, lb) = (&work[i].1, &work[j].1);
            let shares = la.iter().any(|l| lb.contains(l));
            // Shared indices may survive as batch axes; counting them once
            // gives the output size either way.
            let size: f64 = la
                .iter()
                .filter(|l| !lb.contains(l))
                .chain(lb.iter().filter(|l| !la.contains(l)))
                .map(|&l| label_dim[l] as f64)
                .product();
            let key = (!shares, size);
            if key < (best.0, best.1) {
                best = (!shares, size, i, j);
            }
        }
    }
    (best.2, best.3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::contract;

    fn seq(shape: &[usize], offset: f64) -> DenseTensor {
        let mut k = 0.0;
        DenseTensor::from_fn(shape, |_| {
            k += 1.0;
            (k * 0.37 + offset).sin()
        })
    }

    #[test]
    fn single_pair_reduces_to_contract() {
        let a = seq(&[2, 3, 4], 0.1);
        let b = seq(&[4, 5], 0.7);
        let via_net = multi_contract(&[&a, &b], &[vec![(0, 2), (1, 0)]], &[(0, 0), (0, 1), (1, 1)]).unwrap();
        let direct = contract(&a, &[2], &b, &[0]).unwrap();
        assert!(via_net.max_abs_diff(&direct).unwrap() < 1e-12);
    }

    #[test]
    fn hyperedge_three_vectors() {
        let a = DenseTensor::vector(&[1.0, 2.0, 3.0, 4.0]);
        let b = DenseTensor::vector(&[0.5, -1.0, 2.0, 1.0]);
        let c = DenseTensor::vector(&[2.0, 1.0, -1.0, 3.0]);
        let y = multi_contract(&[&a, &b, &c], &[vec![(0, 0), (1, 0), (2, 0)]], &[]).unwrap();
        let want: f64 = (0..4).map(|k| a.data()[k] * b.data()[k] * c.data()[k]).sum();
        assert_eq!(y.rank(), 0);
        assert!((y.data()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn chain_matches_pairwise() {
        let a = seq(&[2, 3], 0.0);
        let b = seq(&[3, 4], 1.0);
        let c = seq(&[4, 5], 2.0);
        let net = multi_contract(
            &[&a, &b, &c],
            &[vec![(0, 1), (1, 0)], vec![(1, 1), (2, 0)]],
            &[(0, 0), (2, 1)],
        )
        .unwrap();
        let ab = contract(&a, &[1], &b, &[0]).unwrap();
        let abc = contract(&ab, &[1], &c, &[0]).unwrap();
        assert!(net.max_abs_diff(&abc).unwrap() < 1e-12);
    }

    #[test]
    fn open_order_is_respected() {
        let a = seq(&[2, 3], 0.0);
        let b = seq(&[3, 4], 1.0);
        let t = multi_contract(&[&a, &b], &[vec![(0, 1), (1, 0)]], &[(1, 1), (0, 0)]).unwrap();
        let ab = contract(&a, &[1], &b, &[0]).unwrap();
        assert!(t.max_abs_diff(&ab.permute(&[1, 0]).unwrap()).unwrap() < 1e-12);
    }

    #[test]
    fn singleton_group_sums_axis() {
        let a = seq(&[3, 4], 0.3);
        let t = multi_contract(&[&a], &[vec![(0, 1)]], &[(0, 0)]).unwrap();
        for i in 0..3 {
            let want: f64 = (0..4).map(|j| a.get(&[i, j])).sum();
            assert!((t.get(&[i]) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn error_paths() {
        let a = seq(&[2, 3], 0.0);
        let b = seq(&[4, 5], 0.0);
        assert!(matches!(
            multi_contract(&[&a, &b], &[vec![(0, 1), (1, 0)]], &[(0, 0), (1, 1)]),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            multi_contract(&[&a], &[], &[(0, 0)]),
            Err(Error::UnboundAxis { tensor: 0, axis: 1 })
        ));
        assert!(matches!(
            multi_contract(&[&a], &[vec![(0, 1)]], &[(0, 0), (0, 1)]),
            Err(Error::DuplicateAxis(1))
        ));
    }
}
