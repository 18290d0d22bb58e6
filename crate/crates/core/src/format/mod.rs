//! Layer formats: a tensorial layer as a contraction hypergraph.
//!
//! One `Input` vertex carries the data flow, every `Weight` vertex is a
//! factor tensor. Edges carry dimensions:
//!
//! * `InputChannel` edges join the input to one weight,
//! * `OutputChannel` edges are open modes of a single weight,
//! * `Rank` edges join two or more weights,
//! * `KernelWindow` edges tie a spatial mode of the input to a kernel mode
//!   of one weight through a dummy tensor.
//!
//! `phi` is the hyperedge multiplicity: the layer output is the sum of
//! `phi` independently parameterized copies of the structure.
//!
//! Layouts are fixed by declaration order. A weight tensor's modes follow
//! the order in which its incident edges are declared. The layer input is
//! `[batch, input channels.., spatial..]` and the output is
//! `[batch, output channels.., spatial'..]`.

mod builtin;
mod materialize;
mod random;
mod text;

pub use builtin::{builtin_format, BuiltinKind, BuiltinParams, KernelParams};
pub use materialize::{materialize, materialize_with_rng, LayerNetwork, MaterializedLayer};
pub use random::{random_format, RandomConstraints};
pub use text::{parse_format, serialize_format};

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{build_dummy, DenseTensor, DummySpec};
use crate::transform::{build_backward_dummy, BackwardDummySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexKind {
    Input,
    Weight,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vertex {
    pub id: String,
    pub kind: VertexKind,
}

impl Vertex {
    pub fn input(id: &str) -> Self {
        Self {
            id: id.to_string(),
            kind: VertexKind::Input,
        }
    }

    pub fn weight(id: &str) -> Self {
        Self {
            id: id.to_string(),
            kind: VertexKind::Weight,
        }
    }
}

/// Convolution window attached to a kernel-window edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Forward(DummySpec),
    /// Window of the transformed backward pass; the input side is the
    /// stride-expanded gradient.
    Backward(BackwardDummySpec),
}

impl Window {
    pub fn beta(&self) -> usize {
        match self {
            Window::Forward(s) => s.beta,
            Window::Backward(b) => b.beta,
        }
    }

    /// Spatial length consumed on the input side.
    pub fn input_len(&self) -> usize {
        match self {
            Window::Forward(s) => s.alpha,
            Window::Backward(b) => b.alpha_tilde,
        }
    }

    /// Spatial length produced.
    pub fn output_len(&self) -> usize {
        match self {
            Window::Forward(s) => s.alpha_prime(),
            Window::Backward(b) => b.alpha,
        }
    }

    /// The forward window this one was derived from (itself when forward).
    pub fn forward_spec(&self) -> DummySpec {
        match self {
            Window::Forward(s) => *s,
            Window::Backward(b) => b.forward,
        }
    }

    /// Dummy tensor plus its (input, output) axes; the kernel axis is 2.
    pub fn dummy(&self) -> Result<(DenseTensor, usize, usize)> {
        match self {
            Window::Forward(s) => Ok((build_dummy(s)?, 0, 1)),
            Window::Backward(b) => Ok((build_backward_dummy(b), 1, 0)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    InputChannel,
    OutputChannel,
    Rank,
    KernelWindow(Window),
}

impl EdgeKind {
    pub fn name(&self) -> &'static str {
        match self {
            EdgeKind::InputChannel => "input_channel",
            EdgeKind::OutputChannel => "output_channel",
            EdgeKind::Rank => "rank",
            EdgeKind::KernelWindow(_) => "kernel_window",
        }
    }

    pub fn window(&self) -> Option<&Window> {
        match self {
            EdgeKind::KernelWindow(w) => Some(w),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub id: String,
    pub dim: usize,
    pub endpoints: Vec<String>,
    pub kind: EdgeKind,
}

impl Edge {
    pub fn new(id: &str, dim: usize, endpoints: &[&str], kind: EdgeKind) -> Self {
        Self {
            id: id.to_string(),
            dim,
            endpoints: endpoints.iter().map(|s| s.to_string()).collect(),
            kind,
        }
    }

    pub fn touches(&self, vertex: &str) -> bool {
        self.endpoints.iter().any(|e| e == vertex)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerFormat {
    pub vertices: Vec<Vertex>,
    pub edges: Vec<Edge>,
    pub phi: usize,
}

impl LayerFormat {
    pub fn new(vertices: Vec<Vertex>, edges: Vec<Edge>, phi: usize) -> Result<Self> {
        let f = Self { vertices, edges, phi };
        f.validate()?;
        Ok(f)
    }

    /// Checks every structural invariant, reporting all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut ids = HashSet::new();
        for v in &self.vertices {
            if !ids.insert(v.id.as_str()) {
                problems.push(format!("duplicate vertex id `{}`", v.id));
            }
        }
        let inputs: Vec<&Vertex> = self.vertices.iter().filter(|v| v.kind == VertexKind::Input).collect();
        if inputs.len() != 1 {
            problems.push(format!("expected exactly one input vertex, found {}", inputs.len()));
        }
        if !self.vertices.iter().any(|v| v.kind == VertexKind::Weight) {
            problems.push("no weight vertices".into());
        }
        let kind_of = |id: &str| self.vertices.iter().find(|v| v.id == id).map(|v| v.kind);

        let mut edge_ids = HashSet::new();
        for e in &self.edges {
            let tag = format!("edge `{}`", e.id);
            if !edge_ids.insert(e.id.as_str()) {
                problems.push(format!("duplicate {tag}"));
            }
            if ids.contains(e.id.as_str()) {
                problems.push(format!("{tag} reuses a vertex id"));
            }
            if e.dim == 0 {
                problems.push(format!("{tag} has dimension 0"));
            }
            if e.endpoints.is_empty() {
                problems.push(format!("{tag} has no endpoints"));
                continue;
            }
            let mut seen = HashSet::new();
            let mut n_input = 0;
            let mut n_weight = 0;
            for p in &e.endpoints {
                if !seen.insert(p.as_str()) {
                    problems.push(format!("{tag} lists `{p}` twice"));
                }
                match kind_of(p) {
                    Some(VertexKind::Input) => n_input += 1,
                    Some(VertexKind::Weight) => n_weight += 1,
                    None => problems.push(format!("{tag} references unknown vertex `{p}`")),
                }
            }
            match &e.kind {
                EdgeKind::InputChannel => {
                    if n_input != 1 || n_weight != 1 {
                        problems.push(format!("{tag}: input channels join the input to exactly one weight"));
                    }
                }
                EdgeKind::OutputChannel => {
                    if n_input != 0 || n_weight != 1 {
                        problems.push(format!("{tag}: output channels are open modes of exactly one weight"));
                    }
                }
                EdgeKind::Rank => {
                    if n_input != 0 || n_weight < 2 {
                        problems.push(format!("{tag}: rank edges join two or more weights"));
                    }
                }
                EdgeKind::KernelWindow(w) => {
                    if n_input != 1 || n_weight != 1 || e.endpoints.len() != 2 {
                        problems.push(format!("{tag}: kernel windows join the input to exactly one weight"));
                    }
                    if let Err(err) = w.forward_spec().validate() {
                        problems.push(format!("{tag}: {err}"));
                    }
                    if w.beta() != e.dim {
                        problems.push(format!(
                            "{tag}: dimension {} differs from window size {}",
                            e.dim,
                            w.beta()
                        ));
                    }
                }
            }
        }
        for v in self.vertices.iter().filter(|v| v.kind == VertexKind::Weight) {
            if !self.edges.iter().any(|e| e.touches(&v.id)) {
                problems.push(format!("weight vertex `{}` touches no edge", v.id));
            }
        }
        if !self.edges.iter().any(|e| e.kind == EdgeKind::InputChannel) {
            problems.push("no input channel edge".into());
        }
        if !self.edges.iter().any(|e| e.kind == EdgeKind::OutputChannel) {
            problems.push("no output channel edge".into());
        }
        if self.phi == 0 {
            problems.push("phi must be at least 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    pub fn input_vertex(&self) -> &Vertex {
        self.vertices
            .iter()
            .find(|v| v.kind == VertexKind::Input)
            .expect("validated format has an input vertex")
    }

    pub fn weight_vertices(&self) -> impl Iterator<Item = &Vertex> {
        self.vertices.iter().filter(|v| v.kind == VertexKind::Weight)
    }

    pub fn weight_count(&self) -> usize {
        self.weight_vertices().count()
    }

    pub fn weight_position(&self, id: &str) -> Option<usize> {
        self.weight_vertices().position(|v| v.id == id)
    }

    /// Indices of the edges incident to `vertex`, in declaration order.
    pub fn incident_edges(&self, vertex: &str) -> Vec<usize> {
        (0..self.edges.len())
            .filter(|&i| self.edges[i].touches(vertex))
            .collect()
    }

    pub fn weight_shape(&self, vertex: &str) -> Vec<usize> {
        self.incident_edges(vertex).iter().map(|&i| self.edges[i].dim).collect()
    }

    pub fn edges_of_kind<'a>(&'a self, pred: impl Fn(&EdgeKind) -> bool + 'a) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges.iter().filter(move |e| pred(&e.kind))
    }

    pub fn input_channels(&self) -> impl Iterator<Item = &Edge> {
        self.edges_of_kind(|k| *k == EdgeKind::InputChannel)
    }

    pub fn output_channels(&self) -> impl Iterator<Item = &Edge> {
        self.edges_of_kind(|k| *k == EdgeKind::OutputChannel)
    }

    pub fn rank_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges_of_kind(|k| *k == EdgeKind::Rank)
    }

    /// Kernel-window edges in declaration order (0 for linear layers).
    pub fn spatial(&self) -> impl Iterator<Item = &Edge> {
        self.edges_of_kind(|k| matches!(k, EdgeKind::KernelWindow(_)))
    }

    /// Per-sample input shape: input channels then spatial lengths.
    pub fn input_shape(&self) -> Vec<usize> {
        self.input_channels()
            .map(|e| e.dim)
            .chain(self.spatial().map(|e| e.kind.window().expect("window").input_len()))
            .collect()
    }

    /// Per-sample output shape: output channels then output spatial lengths.
    pub fn output_shape(&self) -> Vec<usize> {
        self.output_channels()
            .map(|e| e.dim)
            .chain(self.spatial().map(|e| e.kind.window().expect("window").output_len()))
            .collect()
    }

    pub fn input_channel_product(&self) -> usize {
        self.input_channels().map(|e| e.dim).product()
    }

    pub fn output_channel_product(&self) -> usize {
        self.output_channels().map(|e| e.dim).product()
    }

    /// Product of kernel window sizes (`k²` for a square 2-D kernel).
    pub fn window_product(&self) -> usize {
        self.spatial().map(|e| e.dim).product()
    }

    pub fn parameter_count(&self) -> usize {
        self.phi
            * self
                .weight_vertices()
                .map(|v| self.weight_shape(&v.id).iter().product::<usize>())
                .sum::<usize>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv() -> LayerFormat {
        let w = Window::Forward(DummySpec::new(6, 3, 1, 0).unwrap());
        LayerFormat::new(
            vec![Vertex::input("x"), Vertex::weight("w")],
            vec![
                Edge::new("c_in", 4, &["x", "w"], EdgeKind::InputChannel),
                Edge::new("c_out", 5, &["w"], EdgeKind::OutputChannel),
                Edge::new("kh", 3, &["x", "w"], EdgeKind::KernelWindow(w)),
                Edge::new("kw", 3, &["x", "w"], EdgeKind::KernelWindow(w)),
            ],
            1,
        )
        .unwrap()
    }

    #[test]
    fn shapes_follow_declaration_order() {
        let f = conv();
        assert_eq!(f.weight_shape("w"), vec![4, 5, 3, 3]);
        assert_eq!(f.input_shape(), vec![4, 6, 6]);
        assert_eq!(f.output_shape(), vec![5, 4, 4]);
        assert_eq!(f.window_product(), 9);
    }

    #[test]
    fn orphan_weight_rejected() {
        let mut f = conv();
        f.vertices.push(Vertex::weight("lonely"));
        let Err(Error::Validation(msgs)) = f.validate() else {
            panic!("expected validation error")
        };
        assert!(msgs.iter().any(|m| m.contains("lonely")));
    }

    #[test]
    fn missing_input_rejected() {
        let mut f = conv();
        f.vertices.retain(|v| v.kind != VertexKind::Input);
        assert!(f.validate().is_err());
    }

    #[test]
    fn edge_kind_rules() {
        let mut f = conv();
        f.edges.push(Edge::new("r", 2, &["w"], EdgeKind::Rank));
        assert!(f.validate().is_err());

        let mut f = conv();
        f.edges[1].endpoints.push("x".into());
        assert!(f.validate().is_err());

        let mut f = conv();
        f.edges[2].dim = 2;
        assert!(f.validate().is_err());

        let mut f = conv();
        f.phi = 0;
        assert!(f.validate().is_err());
    }
}
