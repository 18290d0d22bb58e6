use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Edge, EdgeKind, LayerFormat, Vertex, Window};
use crate::error::{Error, Result};
use crate::tensor::DummySpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BuiltinKind {
    StandardConv,
    LowRank,
    Tucker2,
    Cp,
    TensorTrain,
    TensorRing,
    OddLike,
}

impl BuiltinKind {
    pub const ALL: [BuiltinKind; 7] = [
        BuiltinKind::StandardConv,
        BuiltinKind::LowRank,
        BuiltinKind::Tucker2,
        BuiltinKind::Cp,
        BuiltinKind::TensorTrain,
        BuiltinKind::TensorRing,
        BuiltinKind::OddLike,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BuiltinKind::StandardConv => "standard",
            BuiltinKind::LowRank => "low-rank",
            BuiltinKind::Tucker2 => "tucker2",
            BuiltinKind::Cp => "cp",
            BuiltinKind::TensorTrain => "tt",
            BuiltinKind::TensorRing => "tr",
            BuiltinKind::OddLike => "odd",
        }
    }
}

impl fmt::Display for BuiltinKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BuiltinKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "standard" | "standard-conv" | "conv" => Ok(BuiltinKind::StandardConv),
            "low-rank" | "lowrank" | "lr" => Ok(BuiltinKind::LowRank),
            "tucker2" | "tk2" => Ok(BuiltinKind::Tucker2),
            "cp" => Ok(BuiltinKind::Cp),
            "tt" | "tensor-train" => Ok(BuiltinKind::TensorTrain),
            "tr" | "tensor-ring" => Ok(BuiltinKind::TensorRing),
            "odd" | "odd-like" => Ok(BuiltinKind::OddLike),
            _ => Err(Error::InvalidParams(format!("unknown builtin `{s}`"))),
        }
    }
}

/// Square convolution window applied to every spatial axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelParams {
    pub size: usize,
    pub input_len: usize,
    pub stride: usize,
    pub padding: usize,
    /// Number of spatial axes, 1 or 2.
    pub spatial: usize,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            size: 3,
            input_len: 8,
            stride: 1,
            padding: 0,
            spatial: 2,
        }
    }
}

/// Dimensions for a builtin topology.
///
/// `ranks` lists one dimension per rank edge; a single entry applies to all
/// of them. `kernel: None` builds a tensorial linear layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuiltinParams {
    pub in_dims: Vec<usize>,
    pub out_dims: Vec<usize>,
    pub ranks: Vec<usize>,
    pub kernel: Option<KernelParams>,
    pub phi: usize,
}

impl BuiltinParams {
    pub fn conv(c_in: usize, c_out: usize, kernel: KernelParams) -> Self {
        Self {
            in_dims: vec![c_in],
            out_dims: vec![c_out],
            ranks: vec![],
            kernel: Some(kernel),
            phi: 1,
        }
    }

    pub fn with_ranks(mut self, ranks: &[usize]) -> Self {
        self.ranks = ranks.to_vec();
        self
    }

    pub fn with_phi(mut self, phi: usize) -> Self {
        self.phi = phi;
        self
    }

    fn rank(&self, i: usize) -> usize {
        if self.ranks.len() == 1 {
            self.ranks[0]
        } else {
            self.ranks[i]
        }
    }
}

/// Default desk-scale parameters for each topology.
impl BuiltinKind {
    pub fn default_params(&self) -> BuiltinParams {
        let kernel = Some(KernelParams::default());
        let (in_dims, out_dims, ranks) = match self {
            BuiltinKind::StandardConv => (vec![6], vec![8], vec![]),
            BuiltinKind::LowRank | BuiltinKind::Cp => (vec![6], vec![8], vec![4]),
            BuiltinKind::Tucker2 => (vec![6], vec![8], vec![4, 4]),
            BuiltinKind::TensorTrain | BuiltinKind::TensorRing => (vec![2, 3], vec![2, 4], vec![3]),
            BuiltinKind::OddLike => (vec![2, 3], vec![2, 4], vec![5]),
        };
        BuiltinParams {
            in_dims,
            out_dims,
            ranks,
            kernel,
            phi: 1,
        }
    }
}

struct Builder {
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
}

impl Builder {
    fn new(weights: usize) -> Self {
        let mut vertices = vec![Vertex::input("x")];
        vertices.extend((0..weights).map(|i| Vertex::weight(&format!("w{i}"))));
        Self {
            vertices,
            edges: Vec::new(),
        }
    }

    fn edge(&mut self, id: &str, dim: usize, endpoints: &[usize], kind: EdgeKind) {
        // index 0 is the input; weight i sits at index i + 1
        let names: Vec<String> = endpoints.iter().map(|&i| self.vertices[i].id.clone()).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        self.edges.push(Edge::new(id, dim, &refs, kind));
    }

    fn windows(&mut self, kernel: Option<&KernelParams>, weight: usize) -> Result<()> {
        let Some(k) = kernel else { return Ok(()) };
        let spec = DummySpec::new(k.input_len, k.size, k.stride, k.padding)
            .map_err(|e| Error::InvalidParams(e.to_string()))?;
        let names: &[&str] = match k.spatial {
            1 => &["k"],
            2 => &["kh", "kw"],
            n => return Err(Error::InvalidParams(format!("{n} spatial axes; expected 1 or 2"))),
        };
        for name in names {
            self.edge(
                name,
                k.size,
                &[0, weight],
                EdgeKind::KernelWindow(Window::Forward(spec)),
            );
        }
        Ok(())
    }

    fn finish(self, phi: usize) -> Result<LayerFormat> {
        LayerFormat::new(self.vertices, self.edges, phi)
    }
}

pub fn builtin_format(kind: BuiltinKind, params: &BuiltinParams) -> Result<LayerFormat> {
    let p = params;
    let bad = |msg: String| Err(Error::InvalidParams(format!("{kind}: {msg}")));
    if p.phi == 0 {
        return bad("phi must be at least 1".into());
    }
    if p.in_dims.iter().chain(&p.out_dims).chain(&p.ranks).any(|&d| d == 0) {
        return bad("dimensions must be positive".into());
    }
    let need_ranks = |n: usize| -> Result<()> {
        if p.ranks.len() == n || (n > 0 && p.ranks.len() == 1) {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "{kind}: needs {n} rank dimension(s) (or one shared), got {}",
                p.ranks.len()
            )))
        }
    };
    let single_channel = || -> Result<(usize, usize)> {
        if p.in_dims.len() == 1 && p.out_dims.len() == 1 {
            Ok((p.in_dims[0], p.out_dims[0]))
        } else {
            Err(Error::InvalidParams(format!(
                "{kind}: needs one input and one output channel dimension"
            )))
        }
    };
    let kernel = p.kernel.as_ref();
    match kind {
        BuiltinKind::StandardConv => {
            let (ci, co) = single_channel()?;
            let mut b = Builder::new(1);
            b.edge("c_in", ci, &[0, 1], EdgeKind::InputChannel);
            b.edge("c_out", co, &[1], EdgeKind::OutputChannel);
            b.windows(kernel, 1)?;
            b.finish(p.phi)
        }
        BuiltinKind::LowRank => {
            let (ci, co) = single_channel()?;
            need_ranks(1)?;
            let mut b = Builder::new(2);
            b.edge("c_in", ci, &[0, 1], EdgeKind::InputChannel);
            b.windows(kernel, 1)?;
            b.edge("r0", p.rank(0), &[1, 2], EdgeKind::Rank);
            b.edge("c_out", co, &[2], EdgeKind::OutputChannel);
            b.finish(p.phi)
        }
        BuiltinKind::Tucker2 => {
            let (ci, co) = single_channel()?;
            need_ranks(2)?;
            let mut b = Builder::new(3);
            b.edge("c_in", ci, &[0, 1], EdgeKind::InputChannel);
            b.edge("r0", p.rank(0), &[1, 2], EdgeKind::Rank);
            b.windows(kernel, 2)?;
            b.edge("r1", p.rank(1), &[2, 3], EdgeKind::Rank);
            b.edge("c_out", co, &[3], EdgeKind::OutputChannel);
            b.finish(p.phi)
        }
        BuiltinKind::Cp => {
            let (ci, co) = single_channel()?;
            need_ranks(1)?;
            let spatial = kernel.map_or(0, |k| k.spatial);
            if spatial > 2 {
                return bad(format!("{spatial} spatial axes; expected 1 or 2"));
            }
            // factors: input, one per spatial axis, output
            let n = spatial + 2;
            let mut b = Builder::new(n);
            b.edge("c_in", ci, &[0, 1], EdgeKind::InputChannel);
            if let Some(k) = kernel {
                let spec = DummySpec::new(k.input_len, k.size, k.stride, k.padding)
                    .map_err(|e| Error::InvalidParams(e.to_string()))?;
                let names = if spatial == 1 { &["k"][..] } else { &["kh", "kw"][..] };
                for (i, name) in names.iter().enumerate() {
                    b.edge(name, k.size, &[0, 2 + i], EdgeKind::KernelWindow(Window::Forward(spec)));
                }
            }
            b.edge("c_out", co, &[n], EdgeKind::OutputChannel);
            let all: Vec<usize> = (1..=n).collect();
            b.edge("r0", p.rank(0), &all, EdgeKind::Rank);
            b.finish(p.phi)
        }
        BuiltinKind::TensorTrain | BuiltinKind::TensorRing => {
            let d = p.in_dims.len();
            if d == 0 || p.out_dims.len() != d {
                return bad("needs equally many (at least one) input and output dimensions".into());
            }
            let ring = kind == BuiltinKind::TensorRing;
            let head = usize::from(kernel.is_some());
            let n = d + head;
            if n < 2 && ring {
                return bad("a ring needs at least two cores".into());
            }
            let n_ranks = if ring { n } else { n - 1 };
            need_ranks(n_ranks)?;
            let mut b = Builder::new(n);
            if kernel.is_some() {
                b.windows(kernel, 1)?;
                b.edge("r0", p.rank(0), &[1, 2], EdgeKind::Rank);
            }
            for t in 0..d {
                let v = 1 + head + t;
                b.edge(&format!("i{t}"), p.in_dims[t], &[0, v], EdgeKind::InputChannel);
                b.edge(&format!("o{t}"), p.out_dims[t], &[v], EdgeKind::OutputChannel);
                let r = head + t;
                if v < n {
                    b.edge(&format!("r{r}"), p.rank(r), &[v, v + 1], EdgeKind::Rank);
                }
            }
            if ring {
                b.edge(&format!("r{}", n - 1), p.rank(n - 1), &[n, 1], EdgeKind::Rank);
            }
            b.finish(p.phi)
        }
        BuiltinKind::OddLike => {
            if p.in_dims.len() != 2 || p.out_dims.len() != 2 {
                return bad("needs two input and two output dimensions".into());
            }
            need_ranks(14)?;
            let mut b = Builder::new(9);
            // grid vertices g0..g8 are weights 1..9
            b.edge("i0", p.in_dims[0], &[0, 1], EdgeKind::InputChannel);
            b.edge("i1", p.in_dims[1], &[0, 3], EdgeKind::InputChannel);
            b.windows(kernel, 5)?;
            const PAIRS: [(usize, usize); 14] = [
                (0, 1),
                (1, 2),
                (3, 4),
                (4, 5),
                (6, 7),
                (7, 8),
                (0, 3),
                (3, 6),
                (1, 4),
                (4, 7),
                (2, 5),
                (5, 8),
                (0, 4),
                (4, 8),
            ];
            for (r, (a, c)) in PAIRS.iter().enumerate() {
                b.edge(&format!("r{r}"), p.rank(r), &[a + 1, c + 1], EdgeKind::Rank);
            }
            b.edge("o0", p.out_dims[0], &[7], EdgeKind::OutputChannel);
            b.edge("o1", p.out_dims[1], &[9], EdgeKind::OutputChannel);
            b.finish(p.phi)
        }
    }
}
