//! Seeded Monte-Carlo over stacks of tensorial layers.
//!
//! Trial `t` draws weights and inputs from its own stream keyed by
//! `(seed, t)`. Trials run on a pool of `workers` threads and are reduced in
//! trial order, so reports do not depend on the worker count.

mod checks;

pub use checks::{
    scale_chain, variance_law_checks, variance_mc, ScaleStep, VarianceCheck, VarianceLawCheck, VarianceLawReport,
    DEFAULT_CHAIN,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{builtin_format, materialize_with_rng, BuiltinKind, BuiltinParams, LayerFormat, MaterializedLayer};
use crate::init::{InitMode, InitPlan};
use crate::rng::{standard_normal, trial_stream, Rng, WeightDistribution};
use crate::tensor::{apply_activation, Activation, DenseTensor, RunningStats};

/// `|a| > 0.99` counts as saturated.
pub const SATURATION_THRESHOLD: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub format: LayerFormat,
    pub activation: Activation,
    pub mode: InitMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    pub batch: usize,
}

impl NetworkSpec {
    /// `depth` copies of one layer.
    pub fn repeated(format: &LayerFormat, depth: usize, activation: Activation, mode: InitMode, batch: usize) -> Self {
        let layer = LayerSpec {
            format: format.clone(),
            activation,
            mode,
        };
        Self {
            layers: vec![layer; depth],
            batch,
        }
    }

    /// Five tensorial linear layers of the grid topology: 28x28 inputs to
    /// 20x25 hidden units, then four 20x25 to 20x25 layers, ranks 5, tanh.
    pub fn odd_stack(phi: usize, mode: InitMode, batch: usize) -> Result<Self> {
        let layer = |in_dims: Vec<usize>| -> Result<LayerSpec> {
            let p = BuiltinParams {
                in_dims,
                out_dims: vec![20, 25],
                ranks: vec![5],
                kernel: None,
                phi,
            };
            Ok(LayerSpec {
                format: builtin_format(BuiltinKind::OddLike, &p)?,
                activation: Activation::Tanh,
                mode,
            })
        };
        let mut layers = vec![layer(vec![28, 28])?];
        for _ in 0..4 {
            layers.push(layer(vec![20, 25])?);
        }
        Ok(Self { layers, batch })
    }

    pub fn input_shape(&self) -> Vec<usize> {
        let mut s = vec![self.batch];
        s.extend(self.layers.first().map(|l| l.format.input_shape()).unwrap_or_default());
        s
    }

    pub fn output_shape(&self) -> Vec<usize> {
        let mut s = vec![self.batch];
        s.extend(self.layers.last().map(|l| l.format.output_shape()).unwrap_or_default());
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() || self.batch == 0 {
            return Err(Error::InvalidParams(
                "network needs at least one layer and a positive batch".into(),
            ));
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.format.validate().map_err(|e| Error::ShapeMismatch {
                layer: i + 1,
                message: e.to_string(),
            })?;
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            let (out, inp) = (pair[0].format.output_shape(), pair[1].format.input_shape());
            if out != inp {
                return Err(Error::ShapeMismatch {
                    layer: i + 2,
                    message: format!("expects input {inp:?} but layer {} produces {out:?}", i + 1),
                });
            }
        }
        Ok(())
    }

    pub fn plans(&self) -> Result<Vec<InitPlan>> {
        self.layers
            .iter()
            .map(|l| InitPlan::new(&l.format, l.mode, l.activation))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.format.parameter_count()).sum()
    }
}

/// One draw of every layer's weights.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<(MaterializedLayer, Activation)>,
}

/// Forward values of one layer.
#[derive(Debug, Clone)]
pub struct LayerState {
    pub pre: DenseTensor,
    pub post: DenseTensor,
}

impl Network {
    pub fn sample(spec: &NetworkSpec, plans: &[InitPlan], rng: &mut Rng) -> Result<Self> {
        let layers = spec
            .layers
            .iter()
            .zip(plans)
            .map(|(l, p)| Ok((materialize_with_rng(&l.format, p, rng)?, l.activation)))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<(MaterializedLayer, Activation)>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[(MaterializedLayer, Activation)] {
        &self.layers
    }

    pub fn forward(&self, x: &DenseTensor) -> Result<Vec<LayerState>> {
        let mut states: Vec<LayerState> = Vec::with_capacity(self.layers.len());
        for (layer, act) in &self.layers {
            let input = states.last().map_or(x, |s| &s.post);
            let pre = layer.forward(input)?;
            let post = apply_activation(&pre, *act);
            states.push(LayerState { pre, post });
        }
        Ok(states)
    }

    pub fn output(&self, x: &DenseTensor) -> Result<DenseTensor> {
        Ok(self.forward(x)?.pop().expect("at least one layer").post)
    }

    /// Gradients with respect to every layer input, first layer first, for
    /// the loss `sum(upstream * output)`.
    pub fn input_gradients(&self, states: &[LayerState], upstream: &DenseTensor) -> Result<Vec<DenseTensor>> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = upstream.clone();
        for ((layer, act), state) in self.layers.iter().zip(states).rev() {
            // exact chain rule through the activation at the recorded pre-activation
            let local = state.pre.zip_map(&g, |z, d| act.derivative(z) * d)?;
            g = layer.backward(&local)?;
            grads.push(g.clone());
        }
        grads.reverse();
        Ok(grads)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub seed: u64,
    pub trials: usize,
    pub workers: usize,
    /// Standard deviation of the injected output gradient.
    pub upstream_scale: f64,
    pub distribution: WeightDistribution,
}

impl TraceConfig {
    pub fn new(seed: u64, trials: usize) -> Self {
        Self {
            seed,
            trials,
            workers: 1,
            upstream_scale: 1.0,
            distribution: WeightDistribution::Normal,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTrace {
    /// 1-based layer index.
    pub layer: usize,
    pub pre_var: f64,
    pub post_var: f64,
    pub saturation: f64,
    /// Variance of the gradient with respect to this layer's input.
    pub grad_var: Option<f64>,
    /// Variance of the gradient arriving at this layer's output.
    pub out_grad_var: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub seed: u64,
    pub trials: usize,
    pub batch: usize,
    pub threshold: f64,
    pub input_var: f64,
    pub upstream_grad_var: Option<f64>,
    pub layers: Vec<LayerTrace>,
}

impl TraceReport {
    /// Per-layer `grad_var / out_grad_var`.
    pub fn gradient_ratios(&self) -> Vec<f64> {
        self.layers
            .iter()
            .filter_map(|l| Some(l.grad_var? / l.out_grad_var?))
            .collect()
    }

    /// Per-layer `pre_var` over the variance of that layer's input.
    pub fn forward_ratios(&self) -> Vec<f64> {
        let mut prev = self.input_var;
        self.layers
            .iter()
            .map(|l| {
                let r = l.pre_var / prev;
                prev = l.post_var;
                r
            })
            .collect()
    }
}

/// Runs `f` for trials `0..trials` on `workers` threads; results in trial order.
pub(crate) fn run_trials<T: Send>(trials: usize, workers: usize, f: impl Fn(u64) -> T + Sync + Send) -> Vec<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| (0..trials as u64).into_par_iter().map(&f).collect())
}

#[derive(Debug, Clone)]
struct TrialStats {
    input: RunningStats,
    pre: Vec<RunningStats>,
    post: Vec<RunningStats>,
    grad: Vec<RunningStats>,
    out_grad: Vec<RunningStats>,
    upstream: RunningStats,
}

fn trace(net: &NetworkSpec, cfg: &TraceConfig, backward: bool) -> Result<TraceReport> {
    net.validate()?;
    if cfg.trials == 0 {
        return Err(Error::InvalidParams("trials must be at least 1".into()));
    }
    let plans: Vec<InitPlan> = net
        .plans()?
        .into_iter()
        .map(|p| p.with_distribution(cfg.distribution))
        .collect();
    let n = net.layers.len();
    let unbounded = || RunningStats::new(f64::INFINITY);

    let per_trial = run_trials(cfg.trials, cfg.workers, |t| -> Result<TrialStats> {
        let mut rng = trial_stream(cfg.seed, t);
        let network = Network::sample(net, &plans, &mut rng)?;
        let x = standard_normal(&net.input_shape(), &mut rng);
        let states = network.forward(&x)?;
        let mut s = TrialStats {
            input: unbounded(),
            pre: vec![unbounded(); n],
            post: vec![RunningStats::new(SATURATION_THRESHOLD); n],
            grad: vec![unbounded(); n],
            out_grad: vec![unbounded(); n],
            upstream: unbounded(),
        };
        s.input.push_all(x.data());
        for (i, st) in states.iter().enumerate() {
            s.pre[i].push_all(st.pre.data());
            s.post[i].push_all(st.post.data());
        }
        if backward {
            let upstream = standard_normal(&net.output_shape(), &mut rng).scale(cfg.upstream_scale);
            s.upstream.push_all(upstream.data());
            let grads = network.input_gradients(&states, &upstream)?;
            for (i, g) in grads.iter().enumerate() {
                s.grad[i].push_all(g.data());
                let arriving = if i + 1 < n { &grads[i + 1] } else { &upstream };
                s.out_grad[i].push_all(arriving.data());
            }
        }
        Ok(s)
    });

    let mut total: Option<TrialStats> = None;
    for s in per_trial {
        let s = s?;
        match total.as_mut() {
            None => total = Some(s),
            Some(acc) => {
                acc.input.merge(&s.input);
                acc.upstream.merge(&s.upstream);
                for i in 0..n {
                    acc.pre[i].merge(&s.pre[i]);
                    acc.post[i].merge(&s.post[i]);
                    acc.grad[i].merge(&s.grad[i]);
                    acc.out_grad[i].merge(&s.out_grad[i]);
                }
            }
        }
    }
    let total = total.expect("trials >= 1");
    let layers = (0..n)
        .map(|i| LayerTrace {
            layer: i + 1,
            pre_var: total.pre[i].variance(),
            post_var: total.post[i].variance(),
            saturation: total.post[i].saturated as f64 / total.post[i].count as f64,
            grad_var: backward.then(|| total.grad[i].variance()),
            out_grad_var: backward.then(|| total.out_grad[i].variance()),
        })
        .collect();
    Ok(TraceReport {
        seed: cfg.seed,
        trials: cfg.trials,
        batch: net.batch,
        threshold: SATURATION_THRESHOLD,
        input_var: total.input.variance(),
        upstream_grad_var: backward.then(|| total.upstream.variance()),
        layers,
    })
}

/// Activation statistics per layer for i.i.d. standard normal inputs.
pub fn forward_trace(net: &NetworkSpec, cfg: &TraceConfig) -> Result<TraceReport> {
    trace(net, cfg, false)
}

/// Forward statistics plus input-gradient variances for an i.i.d. normal
/// output gradient of standard deviation `cfg.upstream_scale`.
pub fn backward_trace(net: &NetworkSpec, cfg: &TraceConfig) -> Result<TraceReport> {
    trace(net, cfg, true)
}
