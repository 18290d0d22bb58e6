//! Backbone graphs and initialization plans.
//!
//! The backbone graph keeps only the contracted edges among the input-role
//! vertex and the weight vertices. For a layer with `n` weight vertices the
//! output variance is
//!
//! ```text
//! p_a * phi * var(input) * prod_k var(W_k) * prod_{i<j} e_ij
//! ```
//!
//! Graph-in/graph-out give every vertex the same variance so that this
//! factor is one on the forward or the transformed backward graph.

use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{EdgeKind, LayerFormat};
use crate::rng::WeightDistribution;
use crate::tensor::Activation;
use crate::transform::build_backward_format;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceMode {
    FanIn,
    FanOut,
}

/// Symmetric adjacency of contracted dimensions; vertex 0 is the input
/// (or, for fan-out, the gradient), `e_ii = 1` and `1` also means no edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneGraph {
    pub tau: usize,
    pub adjacency: Vec<Vec<u64>>,
    pub labels: Vec<String>,
}

impl BackboneGraph {
    pub fn weight_count(&self) -> usize {
        self.tau - 1
    }

    pub fn entry(&self, i: usize, j: usize) -> u64 {
        self.adjacency[i][j]
    }
}

pub fn extract_bg(f: &LayerFormat, mode: TraceMode) -> Result<BackboneGraph> {
    let g = match mode {
        TraceMode::FanIn => f.clone(),
        TraceMode::FanOut => build_backward_format(f)?,
    };
    let mut labels = vec![g.input_vertex().id.clone()];
    labels.extend(g.weight_vertices().map(|v| v.id.clone()));
    let tau = labels.len();
    let index = |id: &str| labels.iter().position(|l| l == id).expect("validated endpoint");
    let mut adjacency = vec![vec![1u64; tau]; tau];
    for e in &g.edges {
        if e.kind == EdgeKind::OutputChannel {
            continue;
        }
        // Edges with more than two endpoints count their dimension once.
        let (i, j) = (index(&e.endpoints[0]), index(&e.endpoints[1]));
        let merged = adjacency[i][j].checked_mul(e.dim as u64).unwrap_or_else(|| {
            warn!("backbone entry ({i}, {j}) overflows u64; saturating");
            u64::MAX
        });
        adjacency[i][j] = merged;
        adjacency[j][i] = merged;
    }
    Ok(BackboneGraph { tau, adjacency, labels })
}

/// Product of the upper-triangle adjacency entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EdgeProduct {
    Exact(u64),
    /// Fallback once the product leaves the signed 64-bit range.
    Approx(f64),
}

impl EdgeProduct {
    pub fn value(&self) -> f64 {
        match *self {
            EdgeProduct::Exact(v) => v as f64,
            EdgeProduct::Approx(v) => v,
        }
    }
}

pub fn edge_product(bg: &BackboneGraph) -> EdgeProduct {
    let upper = (0..bg.tau).flat_map(|i| (i + 1..bg.tau).map(move |j| (i, j)));
    let mut exact: Option<u64> = Some(1);
    let mut approx = 1.0f64;
    for (i, j) in upper {
        let e = bg.adjacency[i][j];
        approx *= e as f64;
        exact = exact.and_then(|p| p.checked_mul(e)).filter(|&p| p <= i64::MAX as u64);
    }
    match exact {
        Some(p) => EdgeProduct::Exact(p),
        None => {
            warn!("edge product exceeds 2^63 - 1; using floating point");
            EdgeProduct::Approx(approx)
        }
    }
}

pub fn predicted_output_variance(bg: &BackboneGraph, input_var: f64, vertex_vars: &[f64], p_a: f64, phi: usize) -> f64 {
    p_a * phi as f64 * input_var * vertex_vars.iter().product::<f64>() * edge_product(bg).value()
}

/// Equal per-vertex variance that makes the propagation factor exactly one.
pub fn graph_init_variance(bg: &BackboneGraph, n: usize, p_a: f64, phi: usize) -> Result<f64> {
    if n == 0 || n != bg.weight_count() {
        return Err(Error::InvalidParams(format!(
            "{n} weight vertices requested for a backbone graph with {}",
            bg.weight_count()
        )));
    }
    if p_a.is_nan() || p_a <= 0.0 || phi == 0 {
        return Err(Error::InvalidParams(format!("p_a = {p_a}, phi = {phi}")));
    }
    let total = p_a * phi as f64 * edge_product(bg).value();
    Ok(1.0 / total.powf(1.0 / n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    GraphIn,
    GraphOut,
    XavierIn,
    XavierOut,
    XavierHarmonic,
    KaimingIn,
    KaimingOut,
    #[serde(rename = "xavier-vertex")]
    XavierPerVertex,
}

impl InitMode {
    pub const ALL: [InitMode; 8] = [
        InitMode::GraphIn,
        InitMode::GraphOut,
        InitMode::XavierIn,
        InitMode::XavierOut,
        InitMode::XavierHarmonic,
        InitMode::KaimingIn,
        InitMode::KaimingOut,
        InitMode::XavierPerVertex,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            InitMode::GraphIn => "graph-in",
            InitMode::GraphOut => "graph-out",
            InitMode::XavierIn => "xavier-in",
            InitMode::XavierOut => "xavier-out",
            InitMode::XavierHarmonic => "xavier-harmonic",
            InitMode::KaimingIn => "kaiming-in",
            InitMode::KaimingOut => "kaiming-out",
            InitMode::XavierPerVertex => "xavier-vertex",
        }
    }

    /// Graph the mode preserves variance on.
    pub fn trace(&self) -> TraceMode {
        match self {
            InitMode::GraphOut | InitMode::XavierOut | InitMode::KaimingOut => TraceMode::FanOut,
            _ => TraceMode::FanIn,
        }
    }
}

impl fmt::Display for InitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InitMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParams(format!("unknown init mode `{s}`")))
    }
}

/// Variance of every weight vertex under a baseline (non-graph) mode.
///
/// Channel products `c_in`/`c_out` multiply all input/output channel edges
/// and `k^2` multiplies all kernel windows. The per-vertex mode uses each
/// vertex's own fan: all incident dimensions except the last declared one.
pub fn baseline_variance(f: &LayerFormat, mode: InitMode) -> Result<Vec<f64>> {
    let k2 = f.window_product() as f64;
    let c_in = f.input_channel_product() as f64;
    let c_out = f.output_channel_product() as f64;
    let same = |v: f64| vec![v; f.weight_count()];
    Ok(match mode {
        InitMode::XavierIn => same(1.0 / (k2 * c_in)),
        InitMode::XavierOut => same(1.0 / (k2 * c_out)),
        InitMode::XavierHarmonic => same(2.0 / (k2 * (c_in + c_out))),
        InitMode::KaimingIn => same(2.0 / (k2 * c_in)),
        InitMode::KaimingOut => same(2.0 / (k2 * c_out)),
        InitMode::XavierPerVertex => f
            .weight_vertices()
            .map(|v| {
                let shape = f.weight_shape(&v.id);
                let fan: usize = shape[..shape.len() - 1].iter().product();
                1.0 / fan as f64
            })
            .collect(),
        InitMode::GraphIn | InitMode::GraphOut => {
            return Err(Error::InvalidParams(format!(
                "{mode} depends on the backbone graph; build a plan"
            )))
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexVariance {
    pub vertex: String,
    pub variance: f64,
}

/// Per-vertex variances for one layer, plus the graph they were derived on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitPlan {
    pub mode: Option<InitMode>,
    pub p_a: f64,
    pub phi: usize,
    pub variances: Vec<VertexVariance>,
    pub distribution: WeightDistribution,
    pub edge_product: EdgeProduct,
    pub backbone: BackboneGraph,
}

impl InitPlan {
    pub fn new(f: &LayerFormat, mode: InitMode, activation: Activation) -> Result<Self> {
        let p_a = activation.scale();
        let backbone = extract_bg(f, mode.trace())?;
        let vars = match mode {
            InitMode::GraphIn | InitMode::GraphOut => {
                vec![graph_init_variance(&backbone, f.weight_count(), p_a, f.phi)?; f.weight_count()]
            }
            _ => baseline_variance(f, mode)?,
        };
        let mut plan = Self::custom(f, &vars)?;
        plan.mode = Some(mode);
        plan.p_a = p_a;
        plan.backbone = backbone;
        plan.edge_product = edge_product(&plan.backbone);
        Ok(plan)
    }

    /// Plan with explicit variances in weight-vertex order. Zero is allowed
    /// here to switch a layer off.
    pub fn custom(f: &LayerFormat, variances: &[f64]) -> Result<Self> {
        if variances.len() != f.weight_count() {
            return Err(Error::InvalidParams(format!(
                "{} variances for {} weight vertices",
                variances.len(),
                f.weight_count()
            )));
        }
        if let Some(v) = variances.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidParams(format!(
                "variance {v} is not a finite nonnegative number"
            )));
        }
        let backbone = extract_bg(f, TraceMode::FanIn)?;
        Ok(Self {
            mode: None,
            p_a: 1.0,
            phi: f.phi,
            variances: f
                .weight_vertices()
                .zip(variances)
                .map(|(v, &variance)| VertexVariance {
                    vertex: v.id.clone(),
                    variance,
                })
                .collect(),
            distribution: WeightDistribution::Normal,
            edge_product: edge_product(&backbone),
            backbone,
        })
    }

    pub fn with_distribution(mut self, d: WeightDistribution) -> Self {
        self.distribution = d;
        self
    }

    pub fn variance_of(&self, vertex: &str) -> Option<f64> {
        self.variances.iter().find(|v| v.vertex == vertex).map(|v| v.variance)
    }

    pub fn variance_values(&self) -> Vec<f64> {
        self.variances.iter().map(|v| v.variance).collect()
    }

    /// `p_a * phi * prod var * prod e` on the plan's own graph.
    pub fn propagation_factor(&self) -> f64 {
        predicted_output_variance(&self.backbone, 1.0, &self.variance_values(), self.p_a, self.phi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::{builtin_format, BuiltinKind, BuiltinParams, Edge, KernelParams, Vertex};

    fn tucker2(c_in: usize, c_out: usize, r: usize, phi: usize) -> LayerFormat {
        let p = BuiltinParams::conv(c_in, c_out, KernelParams::default())
            .with_ranks(&[r])
            .with_phi(phi);
        builtin_format(BuiltinKind::Tucker2, &p).unwrap()
    }

    fn standard(c_in: usize, c_out: usize, k: usize) -> LayerFormat {
        let kp = KernelParams {
            size: k,
            input_len: k + 4,
            ..Default::default()
        };
        builtin_format(BuiltinKind::StandardConv, &BuiltinParams::conv(c_in, c_out, kp)).unwrap()
    }

    #[test]
    fn standard_conv_graph() {
        let bg = extract_bg(&standard(64, 32, 3), TraceMode::FanIn).unwrap();
        assert_eq!(bg.tau, 2);
        assert_eq!(bg.adjacency, vec![vec![1, 576], vec![576, 1]]);
        assert_eq!(edge_product(&bg), EdgeProduct::Exact(576));
        let out = extract_bg(&standard(64, 32, 3), TraceMode::FanOut).unwrap();
        assert_eq!(edge_product(&out), EdgeProduct::Exact(9 * 32));
    }

    #[test]
    fn tucker2_graph_and_variance() {
        let f = tucker2(96, 96, 10, 4);
        let bg = extract_bg(&f, TraceMode::FanIn).unwrap();
        assert_eq!(bg.tau, 4);
        assert_eq!(bg.entry(0, 1), 96);
        assert_eq!(bg.entry(0, 2), 9);
        assert_eq!(bg.entry(1, 2), 10);
        assert_eq!(bg.entry(2, 3), 10);
        assert_eq!(edge_product(&bg), EdgeProduct::Exact(86400));
        let v = graph_init_variance(&bg, 3, 1.0, 4).unwrap();
        // 345600^(1/3) = 70.18...
        assert!((v - 1.4248e-2).abs() < 1e-5, "{v}");
    }

    #[test]
    fn parallel_edges_merge() {
        let f = LayerFormat::new(
            vec![Vertex::input("x"), Vertex::weight("a"), Vertex::weight("b")],
            vec![
                Edge::new("i", 2, &["x", "a"], EdgeKind::InputChannel),
                Edge::new("r0", 3, &["a", "b"], EdgeKind::Rank),
                Edge::new("r1", 5, &["b", "a"], EdgeKind::Rank),
                Edge::new("o", 2, &["b"], EdgeKind::OutputChannel),
            ],
            1,
        )
        .unwrap();
        let bg = extract_bg(&f, TraceMode::FanIn).unwrap();
        assert_eq!(bg.entry(1, 2), 15);
        assert_eq!(bg.entry(2, 1), 15);
    }

    #[test]
    fn empty_product_is_one() {
        let bg = BackboneGraph {
            tau: 3,
            adjacency: vec![vec![1; 3]; 3],
            labels: vec!["x".into(), "a".into(), "b".into()],
        };
        assert_eq!(edge_product(&bg), EdgeProduct::Exact(1));
        assert_eq!(predicted_output_variance(&bg, 2.0, &[0.5, 3.0], 1.0, 2), 6.0);
    }

    #[test]
    fn overflow_falls_back_to_float() {
        let big = 1u64 << 40;
        let bg = BackboneGraph {
            tau: 3,
            adjacency: vec![vec![1, big, 1], vec![big, 1, big], vec![1, big, 1]],
            labels: vec!["x".into(), "a".into(), "b".into()],
        };
        match edge_product(&bg) {
            EdgeProduct::Approx(v) => assert_eq!(v, 2f64.powi(80)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn standard_degenerates_to_xavier_and_kaiming() {
        let f = standard(96, 64, 3);
        let gin = InitPlan::new(&f, InitMode::GraphIn, Activation::Tanh).unwrap();
        assert_eq!(gin.variance_values(), vec![1.0 / 864.0]);
        assert_eq!(baseline_variance(&f, InitMode::XavierIn).unwrap(), vec![1.0 / 864.0]);
        assert_eq!(baseline_variance(&f, InitMode::KaimingIn).unwrap(), vec![2.0 / 864.0]);
        let relu = InitPlan::new(&f, InitMode::GraphIn, Activation::Relu).unwrap();
        assert_eq!(relu.variance_values(), vec![2.0 / 864.0]);
        let gout = InitPlan::new(&f, InitMode::GraphOut, Activation::Tanh).unwrap();
        assert_eq!(gout.variance_values(), vec![1.0 / 576.0]);
    }

    #[test]
    fn relu_scales_by_root_of_two() {
        let f = tucker2(8, 8, 3, 2);
        let bg = extract_bg(&f, TraceMode::FanIn).unwrap();
        let t = graph_init_variance(&bg, 3, 1.0, 2).unwrap();
        let r = graph_init_variance(&bg, 3, 0.5, 2).unwrap();
        assert!((r / t - 2f64.powf(1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn harmonic_equals_fan_in_when_symmetric() {
        let f = standard(16, 16, 3);
        assert_eq!(
            baseline_variance(&f, InitMode::XavierHarmonic).unwrap(),
            baseline_variance(&f, InitMode::XavierIn).unwrap()
        );
    }

    #[test]
    fn per_vertex_fan_skips_last_edge() {
        let f = tucker2(6, 8, 4, 1);
        // w0 [6, 4], w1 [4, 3, 3, 4], w2 [4, 8]
        assert_eq!(
            baseline_variance(&f, InitMode::XavierPerVertex).unwrap(),
            vec![1.0 / 6.0, 1.0 / 36.0, 1.0 / 4.0]
        );
    }

    #[test]
    fn graph_plans_close_the_factor() {
        for kind in BuiltinKind::ALL {
            let f = builtin_format(kind, &kind.default_params().with_phi(3)).unwrap();
            for mode in [InitMode::GraphIn, InitMode::GraphOut] {
                let plan = InitPlan::new(&f, mode, Activation::Relu).unwrap();
                assert!((plan.propagation_factor() - 1.0).abs() < 1e-9, "{kind} {mode}");
            }
        }
    }

    #[test]
    fn mode_names_round_trip() {
        for m in InitMode::ALL {
            assert_eq!(m.name().parse::<InitMode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
    }

    #[test]
    fn custom_plan_checks() {
        let f = tucker2(6, 8, 4, 1);
        assert!(InitPlan::custom(&f, &[1.0, 1.0]).is_err());
        assert!(InitPlan::custom(&f, &[1.0, -1.0, 1.0]).is_err());
        assert!(InitPlan::custom(&f, &[0.0; 3]).is_ok());
    }
}
