use std::io::Write as _;

use anyhow::{bail, Context, Result};
use graphinit::format::{random_format, serialize_format, BuiltinKind, LayerFormat, RandomConstraints};
use graphinit::init::{
    edge_product, extract_bg, BackboneGraph, EdgeProduct, InitMode, InitPlan, TraceMode, VertexVariance,
};
use graphinit::simulate::{
    backward_trace, scale_chain as run_chain, variance_law_checks, LayerSpec, NetworkSpec, ScaleStep, TraceConfig,
    TraceReport, VarianceLawReport, DEFAULT_CHAIN,
};
use graphinit::tensor::{Activation, DummySpec};
use graphinit::transform::verify_backward_factorization;
use log::info;
use serde::Serialize;

use crate::{Emit, Failure, OutputArgs, RandgenArgs, SimulateArgs};

const CLOSURE_TOL: f64 = 1e-9;

fn emit<T: Serialize, R: Serialize>(output: &OutputArgs, report: &T, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let bytes = match output.emit {
        Emit::Json => {
            let mut s = serde_json::to_string_pretty(report)?;
            s.push('\n');
            s.into_bytes()
        }
        Emit::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for row in rows {
                w.serialize(row)?;
            }
            w.into_inner().context("flushing csv")?
        }
    };
    match &output.out {
        Some(path) => std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display())),
        None => Ok(std::io::stdout().write_all(&bytes)?),
    }
}

#[derive(Serialize)]
struct BackboneReport {
    trace: &'static str,
    labels: Vec<String>,
    adjacency: Vec<Vec<u64>>,
    edge_product: EdgeProduct,
}

impl BackboneReport {
    fn new(trace: &'static str, bg: BackboneGraph) -> Self {
        Self {
            trace,
            edge_product: edge_product(&bg),
            labels: bg.labels,
            adjacency: bg.adjacency,
        }
    }
}

#[derive(Serialize)]
struct ModeVariances {
    mode: InitMode,
    variances: Vec<VertexVariance>,
}

#[derive(Serialize)]
struct AnalyzeReport {
    source: String,
    activation: &'static str,
    phi: usize,
    parameter_count: usize,
    backbone: Vec<BackboneReport>,
    plans: Vec<ModeVariances>,
}

#[derive(Serialize)]
struct VarianceRow<'a> {
    mode: InitMode,
    vertex: &'a str,
    variance: f64,
}

pub fn analyze(layer: &crate::LayerArgs, act: Activation, output: &OutputArgs) -> Result<(), Failure> {
    let f = layer.single()?;
    let plans = InitMode::ALL
        .into_iter()
        .map(|mode| {
            Ok(ModeVariances {
                mode,
                variances: InitPlan::new(&f, mode, act)?.variances,
            })
        })
        .collect::<graphinit::Result<Vec<_>>>()?;
    let report = AnalyzeReport {
        source: layer.name(),
        activation: act.name(),
        phi: f.phi,
        parameter_count: f.parameter_count(),
        backbone: vec![
            BackboneReport::new("fan-in", extract_bg(&f, TraceMode::FanIn)?),
            BackboneReport::new("fan-out", extract_bg(&f, TraceMode::FanOut)?),
        ],
        plans,
    };
    let rows = report.plans.iter().flat_map(|p| {
        p.variances.iter().map(move |v| VarianceRow {
            mode: p.mode,
            vertex: &v.vertex,
            variance: v.variance,
        })
    });
    Ok(emit(output, &report, rows)?)
}

#[derive(Serialize)]
struct TraceRow {
    layer: usize,
    pre_var: f64,
    post_var: f64,
    grad_var: Option<f64>,
    saturation: f64,
}

fn network(args: &SimulateArgs) -> Result<NetworkSpec> {
    if args.odd_stack {
        return Ok(NetworkSpec::odd_stack(
            args.layer.phi.unwrap_or(1),
            args.mode,
            args.batch,
        )?);
    }
    if args.layer.is_empty() {
        bail!("give --format, --builtin or --odd-stack");
    }
    let formats = args.layer.formats()?;
    let act = Activation::from(args.act);
    let net = match formats.as_slice() {
        [single] => NetworkSpec::repeated(single, args.depth, act, args.mode, args.batch),
        many => NetworkSpec {
            layers: many
                .iter()
                .map(|f: &LayerFormat| LayerSpec {
                    format: f.clone(),
                    activation: act,
                    mode: args.mode,
                })
                .collect(),
            batch: args.batch,
        },
    };
    net.validate()?;
    Ok(net)
}

pub fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let net = network(args)?;
    let cfg = TraceConfig::new(args.seed, args.trials).with_workers(args.workers);
    info!("tracing {} layers over {} trials", net.layers.len(), args.trials);
    let report: TraceReport = backward_trace(&net, &cfg)?;
    let rows = report.layers.iter().map(|l| TraceRow {
        layer: l.layer,
        pre_var: l.pre_var,
        post_var: l.post_var,
        grad_var: l.grad_var,
        saturation: l.saturation,
    });
    Ok(emit(&args.output, &report, rows)?)
}

#[derive(Serialize)]
struct FactorizationSummary {
    checked: usize,
    failures: Vec<DummySpec>,
}

#[derive(Serialize)]
struct ClosureSummary {
    checked: usize,
    worst: f64,
    tolerance: f64,
    failures: Vec<String>,
}

#[derive(Serialize)]
struct VerifyReport {
    seed: u64,
    passed: bool,
    factorization: FactorizationSummary,
    variance_laws: VarianceLawReport,
    closure: ClosureSummary,
}

#[derive(Serialize)]
struct VerifyRow<'a> {
    check: &'a str,
    value: f64,
    limit: f64,
    passed: bool,
}

fn factorization_grid() -> FactorizationSummary {
    let mut checked = 0;
    let mut failures = Vec::new();
    for alpha in 3..=12 {
        for beta in 1..=5 {
            for stride in 1..=3 {
                for padding in 0..beta {
                    if let Ok(spec) = DummySpec::new(alpha, beta, stride, padding) {
                        checked += 1;
                        if !verify_backward_factorization(&spec) {
                            failures.push(spec);
                        }
                    }
                }
            }
        }
    }
    FactorizationSummary { checked, failures }
}

fn closure_sweep(seed: u64, count: u64) -> graphinit::Result<ClosureSummary> {
    let mut formats = Vec::new();
    for kind in BuiltinKind::ALL {
        formats.push((
            kind.name().to_string(),
            graphinit::format::builtin_format(kind, &kind.default_params())?,
        ));
    }
    for i in 0..count {
        let s = seed.wrapping_add(i);
        formats.push((
            format!("random seed {s}"),
            random_format(s, &RandomConstraints::default()),
        ));
    }
    let mut summary = ClosureSummary {
        checked: 0,
        worst: 0.0,
        tolerance: CLOSURE_TOL,
        failures: Vec::new(),
    };
    for (name, f) in &formats {
        for mode in [InitMode::GraphIn, InitMode::GraphOut] {
            for act in [Activation::Tanh, Activation::Relu] {
                let err = (InitPlan::new(f, mode, act)?.propagation_factor() - 1.0).abs();
                summary.checked += 1;
                summary.worst = summary.worst.max(err);
                if err.is_nan() || err >= CLOSURE_TOL {
                    summary.failures.push(format!("{name} {mode} {}", act.name()));
                }
            }
        }
    }
    Ok(summary)
}

pub fn verify(seed: u64, count: u64, output: &OutputArgs) -> Result<(), Failure> {
    let factorization = factorization_grid();
    let variance_laws = variance_law_checks(seed);
    let closure = closure_sweep(seed, count)?;
    let passed = factorization.failures.is_empty() && variance_laws.passed() && closure.failures.is_empty();
    let report = VerifyReport {
        seed,
        passed,
        factorization,
        variance_laws,
        closure,
    };

    let mut rows = vec![VerifyRow {
        check: "backward factorization mismatches",
        value: report.factorization.failures.len() as f64,
        limit: 0.0,
        passed: report.factorization.failures.is_empty(),
    }];
    rows.extend(report.variance_laws.checks.iter().map(|c| VerifyRow {
        check: &c.name,
        value: c.relative_error(),
        limit: c.tolerance,
        passed: c.passed,
    }));
    rows.push(VerifyRow {
        check: "propagation factor worst deviation",
        value: report.closure.worst,
        limit: CLOSURE_TOL,
        passed: report.closure.failures.is_empty(),
    });
    emit(output, &report, rows)?;

    if passed {
        Ok(())
    } else {
        let failed = rows_failed(&report);
        Err(Failure::Verification(failed.join(", ")))
    }
}

fn rows_failed(r: &VerifyReport) -> Vec<String> {
    let mut out = Vec::new();
    if !r.factorization.failures.is_empty() {
        out.push(format!("{} factorization mismatches", r.factorization.failures.len()));
    }
    out.extend(
        r.variance_laws
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.clone()),
    );
    out.extend(r.closure.failures.iter().cloned());
    out
}

pub fn randgen(args: &RandgenArgs) -> Result<(), Failure> {
    if args.min_vertices == 0 || args.min_vertices > args.max_vertices {
        return Err(anyhow::anyhow!("vertex range {}..={} is empty", args.min_vertices, args.max_vertices).into());
    }
    let mut c = RandomConstraints {
        vertices: (args.min_vertices, args.max_vertices),
        phi: args.phi,
        ..RandomConstraints::default()
    };
    if args.linear {
        c.kernel = None;
    }
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let width = args.count.max(1).to_string().len().max(3);
    for i in 0..args.count {
        let f = random_format(args.seed.wrapping_add(i), &c);
        f.validate()?;
        let path = args.out.join(format!("format_{i:0width$}.toml"));
        std::fs::write(&path, serialize_format(&f)).with_context(|| format!("writing {}", path.display()))?;
        println!("{}", path.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct ChainReport {
    seed: u64,
    trials: usize,
    dims: Vec<usize>,
    steps: Vec<ScaleStep>,
}

pub fn scale_chain(seed: u64, trials: usize, dims: &[usize], output: &OutputArgs) -> Result<(), Failure> {
    let dims = if dims.is_empty() {
        DEFAULT_CHAIN.to_vec()
    } else {
        dims.to_vec()
    };
    let steps = run_chain(&dims, seed, trials)?;
    let report = ChainReport {
        seed,
        trials,
        dims,
        steps,
    };
    Ok(emit(output, &report, report.steps.iter().copied())?)
}
