use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::run_trials;
use crate::error::{Error, Result};
use crate::format::{materialize_with_rng, LayerFormat};
use crate::init::{extract_bg, predicted_output_variance, InitPlan, TraceMode};
use crate::rng::{seeded, standard_normal, trial_stream, WeightDistribution};
use crate::tensor::{contract, DenseTensor, RunningStats};

/// Minimum number of sampled output elements per estimate.
pub const MIN_SAMPLES: usize = 100_000;

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceCheck {
    pub empirical_ratio: f64,
    pub predicted_ratio: f64,
    pub samples: u64,
    pub trials: usize,
}

impl VarianceCheck {
    pub fn relative_error(&self) -> f64 {
        if self.predicted_ratio == 0.0 {
            self.empirical_ratio.abs()
        } else {
            (self.empirical_ratio / self.predicted_ratio - 1.0).abs()
        }
    }
}

/// Output/input variance of one linear layer, measured and predicted.
///
/// Every trial draws fresh weights; the batch is sized so that all trials
/// together produce at least [`MIN_SAMPLES`] output elements.
pub fn variance_mc(f: &LayerFormat, plan: &InitPlan, seed: u64, trials: usize) -> Result<VarianceCheck> {
    if trials == 0 {
        return Err(Error::InvalidParams("trials must be at least 1".into()));
    }
    let bg = extract_bg(f, TraceMode::FanIn)?;
    let predicted_ratio = predicted_output_variance(&bg, 1.0, &plan.variance_values(), 1.0, f.phi);
    let out_len: usize = f.output_shape().iter().product();
    let batch = MIN_SAMPLES.div_ceil(trials * out_len).max(1);
    let mut in_shape = vec![batch];
    in_shape.extend(f.input_shape());

    let per_trial = run_trials(trials, workers(), |t| -> Result<(RunningStats, RunningStats)> {
        let mut rng = trial_stream(seed, t);
        let layer = materialize_with_rng(f, plan, &mut rng)?;
        let x = standard_normal(&in_shape, &mut rng);
        let y = layer.forward(&x)?;
        let mut sx = RunningStats::new(f64::INFINITY);
        let mut sy = RunningStats::new(f64::INFINITY);
        sx.push_all(x.data());
        sy.push_all(y.data());
        Ok((sx, sy))
    });
    let mut sx = RunningStats::new(f64::INFINITY);
    let mut sy = RunningStats::new(f64::INFINITY);
    for r in per_trial {
        let (a, b) = r?;
        sx.merge(&a);
        sy.merge(&b);
    }
    Ok(VarianceCheck {
        empirical_ratio: sy.variance() / sx.variance(),
        predicted_ratio,
        samples: sy.count,
        trials,
    })
}

/// Dimensions of the default chain: a 32x96 input times ten matrices.
pub const DEFAULT_CHAIN: [usize; 12] = [32, 96, 200, 400, 600, 800, 1000, 800, 600, 400, 200, 100];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleStep {
    /// 1-based product step.
    pub step: usize,
    /// Contracted dimension, the exact expected scale.
    pub ground_truth: usize,
    pub mean: f64,
    /// Trial-to-trial sample standard deviation.
    pub std: f64,
}

impl ScaleStep {
    pub fn relative_error(&self) -> f64 {
        (self.mean / self.ground_truth as f64 - 1.0).abs()
    }
}

/// Scale `var(out) / (var(in) * var(W))` at every step of
/// `X[d0 x d1] W1[d1 x d2] ... ` with standard normal entries, using the
/// sampled variances of each trial.
pub fn scale_chain(dims: &[usize], seed: u64, trials: usize) -> Result<Vec<ScaleStep>> {
    if dims.len() < 3 || dims.contains(&0) {
        return Err(Error::InvalidParams(format!(
            "chain {dims:?} needs at least three positive dimensions"
        )));
    }
    if trials == 0 {
        return Err(Error::InvalidParams("trials must be at least 1".into()));
    }
    let steps = dims.len() - 2;
    let var = |t: &DenseTensor| {
        let mut s = RunningStats::new(f64::INFINITY);
        s.push_all(t.data());
        s.variance()
    };
    let per_trial: Vec<Vec<f64>> = run_trials(trials, workers(), |t| {
        let mut rng = trial_stream(seed, t);
        let mut x = standard_normal(&dims[..2], &mut rng);
        (0..steps)
            .map(|s| {
                let w = standard_normal(&dims[s + 1..s + 3], &mut rng);
                let z = contract(&x, &[1], &w, &[0]).expect("chain shapes agree");
                let scale = var(&z) / (var(&x) * var(&w));
                x = z;
                scale
            })
            .collect()
    });
    Ok((0..steps)
        .map(|s| {
            let vals: Vec<f64> = per_trial.iter().map(|v| v[s]).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std = if vals.len() > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            ScaleStep {
                step: s + 1,
                ground_truth: dims[s + 1],
                mean,
                std,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceLawCheck {
    pub name: String,
    pub expected: f64,
    pub measured: f64,
    pub tolerance: f64,
    pub samples: u64,
    pub passed: bool,
}

impl VarianceLawCheck {
    fn new(name: String, expected: f64, measured: f64, tolerance: f64, samples: u64) -> Self {
        let mut c = Self {
            name,
            expected,
            measured,
            tolerance,
            samples,
            passed: false,
        };
        c.passed = c.relative_error() <= tolerance;
        c
    }

    pub fn relative_error(&self) -> f64 {
        if self.expected == 0.0 {
            self.measured.abs()
        } else {
            (self.measured / self.expected - 1.0).abs()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceLawReport {
    pub seed: u64,
    pub checks: Vec<VarianceLawCheck>,
}

impl VarianceLawReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub const SUM_TOLERANCE: f64 = 0.03;
pub const CONTRACT_TOLERANCE: f64 = 0.05;
const MIN_REPEATS: usize = 2000;

fn repeats(out_len: usize) -> usize {
    MIN_SAMPLES.div_ceil(out_len).max(MIN_REPEATS)
}

/// Variance of a sum of independent zero-mean tensors.
fn sum_case(name: String, shape: &[usize], variances: &[f64], seed: u64) -> VarianceLawCheck {
    let mut rng = seeded(seed);
    let mut acc = RunningStats::new(f64::INFINITY);
    let len: usize = shape.iter().product();
    for _ in 0..repeats(len) {
        let mut total = DenseTensor::zeros(shape);
        for &v in variances {
            total
                .add_assign(&WeightDistribution::Normal.sample(shape, v, &mut rng))
                .expect("same shape");
        }
        acc.push_all(total.data());
    }
    VarianceLawCheck::new(name, variances.iter().sum(), acc.variance(), SUM_TOLERANCE, acc.count)
}

/// Variance of `X` contracted with `Y` over their shared trailing/leading modes.
fn contract_case(
    name: String,
    x_shape: &[usize],
    y_shape: &[usize],
    d: usize,
    vx: f64,
    vy: f64,
    seed: u64,
) -> VarianceLawCheck {
    let mut rng = seeded(seed);
    let mut acc = RunningStats::new(f64::INFINITY);
    let axes_x: Vec<usize> = (x_shape.len() - d..x_shape.len()).collect();
    let axes_y: Vec<usize> = (0..d).collect();
    let contracted: usize = y_shape[..d].iter().product();
    let out_len = x_shape.iter().product::<usize>() * y_shape.iter().product::<usize>() / (contracted * contracted);
    for _ in 0..repeats(out_len) {
        let x = WeightDistribution::Normal.sample(x_shape, vx, &mut rng);
        let y = WeightDistribution::Normal.sample(y_shape, vy, &mut rng);
        let z = contract(&x, &axes_x, &y, &axes_y).expect("paired dims agree");
        acc.push_all(z.data());
    }
    VarianceLawCheck::new(
        name,
        vx * vy * contracted as f64,
        acc.variance(),
        CONTRACT_TOLERANCE,
        acc.count,
    )
}

/// Fixed and randomized Monte-Carlo checks that variances add under
/// independent sums and multiply by the contracted size under contraction.
pub fn variance_law_checks(seed: u64) -> VarianceLawReport {
    let mut shapes = seeded(seed);
    let mut case_seed = {
        let mut next = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        move || {
            next = next.wrapping_add(1);
            next
        }
    };
    let mut checks = vec![
        sum_case(
            "sum: two standard normal [8, 8]".into(),
            &[8, 8],
            &[1.0, 1.0],
            case_seed(),
        ),
        contract_case(
            "contract: [4,5,6] var 1 with [6,7] var 0.25".into(),
            &[4, 5, 6],
            &[6, 7],
            1,
            1.0,
            0.25,
            case_seed(),
        ),
    ];

    let dim = |rng: &mut crate::rng::Rng| rng.random_range(2..=8usize);
    for i in 0..6 {
        let rank = shapes.random_range(1..=3usize);
        let shape: Vec<usize> = (0..rank).map(|_| dim(&mut shapes)).collect();
        let terms = shapes.random_range(2..=3usize);
        let vars: Vec<f64> = (0..terms).map(|_| shapes.random_range(0.1..2.0)).collect();
        checks.push(sum_case(
            format!("sum {i}: {terms} terms of {shape:?}"),
            &shape,
            &vars,
            case_seed(),
        ));
    }
    for i in 0..6 {
        let d = 1 + i % 3;
        let shared: Vec<usize> = (0..d).map(|_| dim(&mut shapes)).collect();
        let x_free: Vec<usize> = (0..shapes.random_range(1..=2usize)).map(|_| dim(&mut shapes)).collect();
        let y_free = vec![dim(&mut shapes)];
        let x_shape: Vec<usize> = x_free.iter().chain(&shared).copied().collect();
        let y_shape: Vec<usize> = shared.iter().chain(&y_free).copied().collect();
        let vx = shapes.random_range(0.2..2.0);
        let vy = shapes.random_range(0.2..2.0);
        checks.push(contract_case(
            format!("contract {i}: {x_shape:?} x {y_shape:?} over {d}"),
            &x_shape,
            &y_shape,
            d,
            vx,
            vy,
            case_seed(),
        ));
    }

    let x = standard_normal(&[4, 5, 6], &mut seeded(case_seed()));
    let z = contract(&x, &[2], &DenseTensor::zeros(&[6, 7]), &[0]).expect("shapes agree");
    let mut acc = RunningStats::new(f64::INFINITY);
    acc.push_all(z.data());
    checks.push(VarianceLawCheck::new(
        "contract: zero tensor".into(),
        0.0,
        acc.variance(),
        0.0,
        acc.count,
    ));

    VarianceLawReport { seed, checks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::{builtin_format, BuiltinKind, BuiltinParams};

    #[test]
    fn chain_of_one_step_scales_by_dim() {
        let s = scale_chain(&[16, 40, 24], 3, 50).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].ground_truth, 40);
        assert!(s[0].relative_error() < 0.05, "{:?}", s[0]);
    }

    #[test]
    fn zero_plan_ratio_is_zero() {
        let f = builtin_format(BuiltinKind::LowRank, &BuiltinKind::LowRank.default_params()).unwrap();
        let plan = InitPlan::custom(&f, &[0.0, 0.0]).unwrap();
        let r = variance_mc(&f, &plan, 1, 2).unwrap();
        assert_eq!(r.empirical_ratio, 0.0);
        assert_eq!(r.predicted_ratio, 0.0);
        assert!(r.samples >= MIN_SAMPLES as u64);
    }

    #[test]
    fn fixed_contraction_case() {
        let c = contract_case("c".into(), &[4, 5, 6], &[6, 7], 1, 1.0, 0.25, 11);
        assert_eq!(c.expected, 1.5);
        assert!(c.passed, "{c:?}");
    }

    #[test]
    fn linear_standard_layer_ratio() {
        let p = BuiltinParams {
            in_dims: vec![20],
            out_dims: vec![30],
            ranks: vec![],
            kernel: None,
            phi: 1,
        };
        let f = builtin_format(BuiltinKind::StandardConv, &p).unwrap();
        let plan = InitPlan::custom(&f, &[0.1]).unwrap();
        let r = variance_mc(&f, &plan, 2, 50).unwrap();
        assert!((r.predicted_ratio - 2.0).abs() < 1e-12);
        assert!(r.relative_error() < 0.1, "{r:?}");
    }
}
