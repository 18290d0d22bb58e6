use super::{EdgeKind, LayerFormat, Window};
use crate::error::{Error, Result};
use crate::init::InitPlan;
use crate::rng::{seeded, Rng};
use crate::tensor::{contract, multi_contract, reversal_matrix, transformation_matrix, AxisRef, DenseTensor};
use crate::transform::build_backward_format;

/// Contraction network of one sub-structure of a layer.
///
/// Tensor slots: 0 is the batched input, `1..=n` the weights in vertex
/// order, then one dummy per kernel window.
#[derive(Debug, Clone)]
pub struct LayerNetwork {
    format: LayerFormat,
    dummies: Vec<DenseTensor>,
    groups: Vec<Vec<AxisRef>>,
    open: Vec<AxisRef>,
}

impl LayerNetwork {
    pub fn new(format: &LayerFormat) -> Result<Self> {
        format.validate()?;
        let weights: Vec<&str> = format.weight_vertices().map(|v| v.id.as_str()).collect();
        let slot = |id: &str| 1 + weights.iter().position(|w| *w == id).expect("weight endpoint");
        let mode = |id: &str, edge: usize| {
            format
                .incident_edges(id)
                .iter()
                .position(|&e| e == edge)
                .expect("incident edge")
        };
        let n_in = format.input_channels().count();
        let first_dummy = 1 + weights.len();

        let mut dummies = Vec::new();
        let mut groups = Vec::new();
        let mut out_channels = Vec::new();
        let mut out_spatial = Vec::new();
        let mut in_channel = 0;
        for (i, e) in format.edges.iter().enumerate() {
            let weight_axes = || -> Vec<AxisRef> {
                e.endpoints
                    .iter()
                    .filter(|p| weights.contains(&p.as_str()))
                    .map(|p| (slot(p), mode(p, i)))
                    .collect()
            };
            match &e.kind {
                EdgeKind::InputChannel => {
                    let mut g = vec![(0, 1 + in_channel)];
                    g.extend(weight_axes());
                    groups.push(g);
                    in_channel += 1;
                }
                EdgeKind::OutputChannel => out_channels.extend(weight_axes()),
                EdgeKind::Rank => groups.push(weight_axes()),
                EdgeKind::KernelWindow(w) => {
                    let (tensor, in_axis, out_axis) = w.dummy()?;
                    let d = first_dummy + dummies.len();
                    groups.push(vec![(0, 1 + n_in + dummies.len()), (d, in_axis)]);
                    let mut kernel = weight_axes();
                    kernel.push((d, 2));
                    groups.push(kernel);
                    out_spatial.push((d, out_axis));
                    dummies.push(tensor);
                }
            }
        }
        let mut open = vec![(0, 0)];
        open.extend(out_channels);
        open.extend(out_spatial);
        Ok(Self {
            format: format.clone(),
            dummies,
            groups,
            open,
        })
    }

    pub fn format(&self) -> &LayerFormat {
        &self.format
    }

    pub fn dummies(&self) -> &[DenseTensor] {
        &self.dummies
    }

    /// Axis groups joined by one summation index each.
    pub fn groups(&self) -> &[Vec<AxisRef>] {
        &self.groups
    }

    pub fn open_axes(&self) -> &[AxisRef] {
        &self.open
    }

    /// Contracts a `[batch, input..]` tensor with one set of weights.
    pub fn execute(&self, input: &DenseTensor, weights: &[DenseTensor]) -> Result<DenseTensor> {
        let want = self.format.input_shape();
        if input.rank() != want.len() + 1 || input.shape()[1..] != want[..] {
            return Err(Error::DimensionMismatch(format!(
                "layer input {:?} does not match [batch, {want:?}]",
                input.shape()
            )));
        }
        if weights.len() != self.format.weight_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} weight tensors for {} vertices",
                weights.len(),
                self.format.weight_count()
            )));
        }
        let mut tensors: Vec<&DenseTensor> = Vec::with_capacity(1 + weights.len() + self.dummies.len());
        tensors.push(input);
        tensors.extend(weights);
        tensors.extend(&self.dummies);
        multi_contract(&tensors, &self.groups, &self.open)
    }
}

/// A layer with sampled weights: `phi` sub-structures of weight tensors.
#[derive(Debug, Clone)]
pub struct MaterializedLayer {
    forward: LayerNetwork,
    backward: Option<LayerNetwork>,
    weights: Vec<Vec<DenseTensor>>,
}

pub fn materialize(f: &LayerFormat, plan: &InitPlan, seed: u64) -> Result<MaterializedLayer> {
    materialize_with_rng(f, plan, &mut seeded(seed))
}

/// Samples sub-structure by sub-structure, vertices in declaration order.
pub fn materialize_with_rng(f: &LayerFormat, plan: &InitPlan, rng: &mut Rng) -> Result<MaterializedLayer> {
    f.validate()?;
    let vars = f
        .weight_vertices()
        .map(|v| {
            plan.variance_of(&v.id)
                .ok_or_else(|| Error::PlanIncomplete(v.id.clone()))
        })
        .collect::<Result<Vec<f64>>>()?;
    let shapes: Vec<Vec<usize>> = f.weight_vertices().map(|v| f.weight_shape(&v.id)).collect();
    let weights = (0..f.phi)
        .map(|_| {
            shapes
                .iter()
                .zip(&vars)
                .map(|(s, &v)| plan.distribution.sample(s, v, rng))
                .collect()
        })
        .collect();
    MaterializedLayer::from_weights(f, weights)
}

impl MaterializedLayer {
    pub fn from_weights(f: &LayerFormat, weights: Vec<Vec<DenseTensor>>) -> Result<Self> {
        let forward = LayerNetwork::new(f)?;
        if weights.len() != f.phi {
            return Err(Error::DimensionMismatch(format!(
                "{} sub-structures for phi = {}",
                weights.len(),
                f.phi
            )));
        }
        for sub in &weights {
            for (v, w) in f.weight_vertices().zip(sub) {
                if w.shape() != f.weight_shape(&v.id) {
                    return Err(Error::DimensionMismatch(format!(
                        "weight `{}` has shape {:?}, expected {:?}",
                        v.id,
                        w.shape(),
                        f.weight_shape(&v.id)
                    )));
                }
            }
        }
        let all_forward = f.spatial().all(|e| matches!(e.kind.window(), Some(Window::Forward(_))));
        // Padding of a whole kernel or more has no backward window.
        let backward = match build_backward_format(f) {
            Ok(g) if all_forward => Some(LayerNetwork::new(&g)?),
            _ => None,
        };
        Ok(Self {
            forward,
            backward,
            weights,
        })
    }

    pub fn format(&self) -> &LayerFormat {
        self.forward.format()
    }

    pub fn network(&self) -> &LayerNetwork {
        &self.forward
    }

    /// `weights()[sub][vertex]`.
    pub fn weights(&self) -> &[Vec<DenseTensor>] {
        &self.weights
    }

    /// Sum of the sub-structure outputs for a `[batch, input..]` tensor.
    pub fn forward(&self, x: &DenseTensor) -> Result<DenseTensor> {
        let mut out: Option<DenseTensor> = None;
        for sub in &self.weights {
            let y = self.forward.execute(x, sub)?;
            match out.as_mut() {
                Some(acc) => acc.add_assign(&y)?,
                None => out = Some(y),
            }
        }
        Ok(out.expect("phi >= 1"))
    }

    /// Gradient with respect to the input, given the gradient of the output.
    ///
    /// Runs the backward format: the output gradient is spread by the
    /// transformation matrix on each spatial axis and every kernel mode of
    /// the weights is flipped by the reversal matrix.
    pub fn backward(&self, dy: &DenseTensor) -> Result<DenseTensor> {
        let backward = self.backward.as_ref().ok_or_else(|| {
            Error::DimensionMismatch("layer has no backward form (backward windows or padding >= kernel size)".into())
        })?;
        let f = self.format();
        let want = f.output_shape();
        if dy.rank() != want.len() + 1 || dy.shape()[1..] != want[..] {
            return Err(Error::DimensionMismatch(format!(
                "output gradient {:?} does not match [batch, {want:?}]",
                dy.shape()
            )));
        }
        let n_out = f.output_channels().count();
        let mut expanded = dy.clone();
        for (s, e) in f.spatial().enumerate() {
            let spec = e.kind.window().expect("window").forward_spec();
            let t = transformation_matrix(spec.alpha_prime(), spec.stride);
            expanded = replace_axis(&expanded, 1 + n_out + s, &t)?;
        }

        let reversed: Vec<Vec<DenseTensor>> = self
            .weights
            .iter()
            .map(|sub| {
                f.weight_vertices()
                    .zip(sub)
                    .map(|(v, w)| {
                        let mut w = w.clone();
                        for (m, &i) in f.incident_edges(&v.id).iter().enumerate() {
                            if let EdgeKind::KernelWindow(win) = &f.edges[i].kind {
                                w = replace_axis(&w, m, &reversal_matrix(win.beta()))?;
                            }
                        }
                        Ok(w)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;

        let mut out: Option<DenseTensor> = None;
        for sub in &reversed {
            let g = backward.execute(&expanded, sub)?;
            match out.as_mut() {
                Some(acc) => acc.add_assign(&g)?,
                None => out = Some(g),
            }
        }
        Ok(out.expect("phi >= 1"))
    }
}

/// Contracts axis `axis` of `t` with the rows of `m`, keeping the axis position.
fn replace_axis(t: &DenseTensor, axis: usize, m: &DenseTensor) -> Result<DenseTensor> {
    let c = contract(t, &[axis], m, &[0])?;
    let last = c.rank() - 1;
    let order: Vec<usize> = (0..axis).chain(std::iter::once(last)).chain(axis..last).collect();
    c.permute(&order)
}
