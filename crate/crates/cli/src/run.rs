use std::path::Path;
use std::time::Instant;

use curvop::applications::{
    fisher_merge, influence_upweight, newton_step, operator_diagonal, overlap_with, prune_with,
    DiagSource, InfluenceConfig, InverseDiagonal, MergeMode, NewtonConfig, PruneMode,
};
use curvop::bench::{bench, spec_name};
use curvop::curvature::{curvature_operator, DampingScheme, KfacFlavor};
use curvop::io;
use curvop::linop::{check_deterministic, to_dense};
use curvop::rla::{
    frobenius_sq, hutchinson_trace, hutchpp_trace, log_spectral_density, probe, spectral_density,
    xtrace, DensityOptions, FrobeniusVariant, ProbeDistribution, ProbeSpec,
};
use curvop::solvers::{eigsh_topk, CgOptions, EigshOptions};
use curvop::{
    Batching, CurvatureKind, CurvatureSpec, EmpiricalRisk, Error, OperatorRef, ParamList,
};
use serde_json::{json, Map, Value};

use crate::args::*;
use crate::svg;

/// A failed invocation: reported as `{"error", "context"}` on stderr.
#[derive(Debug)]
pub struct Failure {
    pub message: String,
    pub context: Map<String, Value>,
    pub code: i32,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        let mut context = Map::new();
        context.insert("kind".into(), json!("usage"));
        Failure {
            message: message.into(),
            context,
            code: 2,
        }
    }

    pub fn to_json(&self, command: Option<&str>) -> Value {
        let mut context = self.context.clone();
        if let Some(c) = command {
            context.insert("command".into(), json!(c));
        }
        json!({ "error": self.message, "context": context })
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let mut context = Map::new();
        context.insert("kind".into(), json!(e.kind()));
        match &e {
            Error::Parse { path, field, .. } => {
                context.insert("path".into(), json!(path));
                context.insert("field".into(), json!(field));
            }
            Error::Io { path, .. } => {
                context.insert("path".into(), json!(path));
            }
            _ => {}
        }
        Failure {
            message: e.to_string(),
            context,
            code: 1,
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn emit_text(out: &Output, text: &str) -> Outcome {
    match &out.out {
        Some(p) => io::write_text(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn emit(out: &Output, mut report: Value, started: Instant) -> Outcome {
    if out.timing {
        report["wall_seconds"] = json!(started.elapsed().as_secs_f64());
    }
    let mut text = io::to_json_string(&report)?;
    text.push('\n');
    emit_text(out, &text)
}

fn kfac_flavor(flavor: Option<KfacFlavorArg>, samples: usize, seed: u64) -> KfacFlavor {
    match flavor.unwrap_or(KfacFlavorArg::Type2) {
        KfacFlavorArg::Type2 => KfacFlavor::Type2,
        KfacFlavorArg::Mc => KfacFlavor::MonteCarlo { samples, seed },
        KfacFlavorArg::Empirical => KfacFlavor::Empirical,
    }
}

fn spec_of(
    c: Curvature,
    flavor: Option<KfacFlavorArg>,
    samples: Option<usize>,
    seed: u64,
) -> std::result::Result<CurvatureSpec, Failure> {
    if flavor.is_some() && c != Curvature::Kfac {
        return Err(Failure::usage(
            "--kfac-flavor applies only to --curvature kfac",
        ));
    }
    let sampled =
        c == Curvature::McFisher || (c == Curvature::Kfac && flavor == Some(KfacFlavorArg::Mc));
    if samples.is_some() && !sampled {
        return Err(Failure::usage(
            "--samples applies only to Monte-Carlo curvatures",
        ));
    }
    let samples = samples.unwrap_or(1);
    Ok(match c {
        Curvature::Hessian => CurvatureSpec::Exact(CurvatureKind::Hessian),
        Curvature::Ggn => CurvatureSpec::Exact(CurvatureKind::Ggn),
        Curvature::McFisher => {
            CurvatureSpec::Exact(CurvatureKind::MonteCarloFisher { samples, seed })
        }
        Curvature::EmpFisher => CurvatureSpec::Exact(CurvatureKind::EmpiricalFisher),
        Curvature::Type2Fisher => CurvatureSpec::Exact(CurvatureKind::TypeTwoFisher),
        Curvature::Kfac => CurvatureSpec::Kfac(kfac_flavor(flavor, samples, seed)),
    })
}

struct Loaded {
    risk: EmpiricalRisk,
    params: ParamList,
    spec: CurvatureSpec,
}

impl Loaded {
    fn new(p: &Problem, default: Curvature) -> std::result::Result<Self, Failure> {
        let spec = spec_of(
            p.curvature.unwrap_or(default),
            p.kfac_flavor,
            p.samples,
            p.seed,
        )?;
        let (risk, params) = io::load_problem(&p.model, &p.params, &p.data)?;
        let risk = match p.batch_size {
            Some(b) if p.shuffle => risk.with_batching(Batching::shuffled(b, p.seed))?,
            Some(b) => risk.with_batching(Batching::Size(b))?,
            None => risk,
        };
        Ok(Loaded { risk, params, spec })
    }

    fn operator(&self) -> std::result::Result<OperatorRef, Failure> {
        Ok(curvature_operator(&self.risk, &self.params, self.spec)?)
    }

    fn name(&self) -> String {
        spec_name(&self.spec)
    }

    fn theta(&self) -> std::result::Result<Vec<f64>, Failure> {
        Ok(self.risk.layout().flatten(&self.params)?)
    }
}

fn cg_options(cg: &CgArgs) -> CgOptions {
    CgOptions {
        rtol: cg.rtol,
        atol: 0.0,
        maxiter: cg.maxiter,
    }
}

fn read_vector(path: &Path, dim: usize) -> std::result::Result<Vec<f64>, Failure> {
    let p = path.display().to_string();
    let parse = |field: &str, message: String| Error::Parse {
        path: p.clone(),
        field: field.to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: p.clone(),
        source,
    })?;
    let v: Value = serde_json::from_str(&text).map_err(|e| parse("vector", e.to_string()))?;
    let items = v
        .get("vector")
        .unwrap_or(&v)
        .as_array()
        .ok_or_else(|| parse("vector", "expected an array of numbers".into()))?;
    let xs = items
        .iter()
        .enumerate()
        .map(|(i, x)| {
            x.as_f64()
                .ok_or_else(|| parse(&format!("vector[{i}]"), "expected a number".into()))
        })
        .collect::<std::result::Result<Vec<f64>, Error>>()?;
    if xs.len() != dim {
        return Err(parse(
            "vector",
            format!("expected {dim} entries, got {}", xs.len()),
        )
        .into());
    }
    Ok(xs)
}

fn diag_source(e: DiagEstimator, budget: usize, seed: u64) -> DiagSource {
    match e {
        DiagEstimator::Exact => DiagSource::Exact,
        DiagEstimator::Hutchinson => DiagSource::Hutchinson {
            probes: budget,
            seed,
        },
        DiagEstimator::Xdiag => DiagSource::Xdiag { budget, seed },
    }
}

fn estimator_name(e: DiagEstimator) -> &'static str {
    match e {
        DiagEstimator::Exact => "exact",
        DiagEstimator::Hutchinson => "hutchinson",
        DiagEstimator::Xdiag => "xdiag",
    }
}

pub fn run(cmd: Command) -> Outcome {
    let started = Instant::now();
    match cmd {
        Command::Matvec { problem, vector } => {
            let l = Loaded::new(&problem, Curvature::Ggn)?;
            let op = l.operator()?;
            let n = op.shape().1;
            let v = match &vector {
                Some(p) => read_vector(p, n)?,
                None => probe(ProbeDistribution::Normal, n, problem.seed, 0),
            };
            let r = op.apply(&v)?;
            emit(
                &problem.output,
                json!({ "command": "matvec", "curvature": l.name(), "seed": problem.seed, "vector": v, "result": r }),
                started,
            )
        }
        Command::Materialize { problem } => {
            let l = Loaded::new(&problem, Curvature::Ggn)?;
            let m = to_dense(l.operator()?.as_ref())?;
            let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
            emit(
                &problem.output,
                json!({ "command": "materialize", "curvature": l.name(), "dim": m.nrows(), "matrix": rows }),
                started,
            )
        }
        Command::Trace {
            problem,
            estimator,
            budget,
        } => {
            let l = Loaded::new(&problem, Curvature::Ggn)?;
            let op = l.operator()?;
            let seed = problem.seed;
            let (name, value, std_error, matvecs) = match estimator {
                TraceEstimator::Exact => {
                    let d = operator_diagonal(op.as_ref(), DiagSource::Exact)?;
                    ("exact", d.iter().sum::<f64>(), None, d.len())
                }
                TraceEstimator::Hutchinson => {
                    let e = hutchinson_trace(op.as_ref(), &ProbeSpec::rademacher(budget, seed))?;
                    ("hutchinson", e.value, e.std_error, e.matvecs)
                }
                TraceEstimator::Hutchpp => {
                    let e = hutchpp_trace(op.as_ref(), budget, seed)?;
                    ("hutchpp", e.value, e.std_error, e.matvecs)
                }
                TraceEstimator::Xtrace => {
                    let e = xtrace(op.as_ref(), budget, seed)?;
                    ("xtrace", e.value, e.std_error, e.matvecs)
                }
            };
            emit(
                &problem.output,
                json!({
                    "command": "trace",
                    "curvature": l.name(),
                    "estimator": name,
                    "budget": budget,
                    "seed": seed,
                    "dim": op.shape().0,
                    "estimate": value,
                    "std_error": std_error,
                    "matvecs": matvecs,
                }),
                started,
            )
        }
        Command::Diag {
            problem,
            estimator,
            budget,
        } => {
            let l = Loaded::new(&problem, Curvature::Ggn)?;
            let op = l.operator()?;
            let d = operator_diagonal(op.as_ref(), diag_source(estimator, budget, problem.seed))?;
            emit(
                &problem.output,
                json!({
                    "command": "diag",
                    "curvature": l.name(),
                    "estimator": estimator_name(estimator),
                    "budget": budget,
                    "seed": problem.seed,
                    "diagonal": d,
                }),
                started,
            )
        }
        Command::Frobenius {
            problem,
            budget,
            variant,
        } => {
            let l = Loaded::new(&problem, Curvature::Ggn)?;
            let op = l.operator()?;
            let (v, name) = match variant {
                FrobeniusArg::TwoPass => (FrobeniusVariant::TwoPass, "two-pass"),
                FrobeniusArg::OnePass => (FrobeniusVariant::OnePass, "one-pass"),
            };
            let e = frobenius_sq(op.as_ref(), &ProbeSpec::rademacher(budget, problem.seed), v)?;
            emit(
                &problem.output,
                json!({
                    "command": "frobenius",
                    "curvature": l.name(),
                    "variant": name,
                    "probes": budget,
                    "seed": problem.seed,
                    "estimate": e.value,
                    "std_error": e.std_error,
                    "matvecs": e.matvecs,
                }),
                started,
            )
        }
        Command::Spectrum {
            problem,
            runs,
            steps,
            sigma,
            grid_points,
            log,
            eps,
            svg,
        } => {
            let l = Loaded::new(&problem, Curvature::Ggn)?;
            let op = l.operator()?;
            let opts = DensityOptions {
                sigma,
                grid_points,
                ..DensityOptions::new(runs, steps, problem.seed)
            };
            let d = if log {
                log_spectral_density(op.as_ref(), &opts, eps)?
            } else {
                spectral_density(op.as_ref(), &opts)?
            };
            let csv = io::csv(
                &["grid", "density"],
                d.grid.iter().zip(&d.density).map(|(g, p)| vec![*g, *p]),
            );
            emit_text(&problem.output, &csv)?;
            let svg_path =
                svg.or_else(|| problem.output.out.as_ref().map(|p| p.with_extension("svg")));
            if let Some(p) = svg_path {
                let xlabel = if log { "log(|λ| + ε)" } else { "λ" };
                let title = format!(
                    "{} spectral density (σ = {})",
                    l.name(),
                    io::format_real(d.sigma)
                );
                io::write_text(
                    &p,
                    &svg::line_plot(&d.grid, &d.density, &title, xlabel, "density"),
                )?;
            }
            Ok(())
        }
        Command::Eigs {
            problem,
            k,
            tol,
            vectors,
        } => {
            let l = Loaded::new(&problem, Curvature::Ggn)?;
            let op = l.operator()?;
            let opts = EigshOptions {
                tol,
                seed: problem.seed,
                ..Default::default()
            };
            let r = eigsh_topk(op.as_ref(), k, &opts)?;
            let mut report = json!({
                "command": "eigs",
                "curvature": l.name(),
                "k": k,
                "seed": problem.seed,
                "values": r.values,
                "residuals": r.residuals,
                "matvecs": r.matvecs,
            });
            if vectors {
                report["vectors"] = json!(r.vectors);
            }
            emit(&problem.output, report, started)
        }
        Command::Newton {
            problem,
            damping,
            damping_scheme,
            cg,
        } => {
            let l = Loaded::new(&problem, Curvature::Ggn)?;
            let scheme = match (damping_scheme, l.spec) {
                (SchemeArg::Heuristic, CurvatureSpec::Exact(_)) => {
                    return Err(Failure::usage(
                        "--damping-scheme heuristic applies only to --curvature kfac",
                    ))
                }
                (SchemeArg::Heuristic, _) => DampingScheme::Heuristic,
                (SchemeArg::Exact, _) => DampingScheme::Exact,
            };
            let cfg = NewtonConfig {
                kfac_scheme: scheme,
                cg: cg_options(&cg),
                ..NewtonConfig::new(l.spec, damping)
            };
            let r = newton_step(&l.risk, &l.params, &cfg)?;
            emit(
                &problem.output,
                json!({
                    "command": "newton",
                    "curvature": l.name(),
                    "damping": damping,
                    "direction": r.direction,
                    "solver": r.report,
                }),
                started,
            )
        }
        Command::Influence {
            problem,
            datum,
            damping,
            cg,
        } => {
            let l = Loaded::new(&problem, Curvature::Hessian)?;
            let CurvatureSpec::Exact(kind) = l.spec else {
                return Err(Failure::usage(
                    "influence needs an exact curvature, not kfac",
                ));
            };
            let cfg = InfluenceConfig {
                curvature: kind,
                cg: cg_options(&cg),
                ..InfluenceConfig::new(damping)
            };
            let r = influence_upweight(&l.risk, &l.params, datum, &cfg)?;
            emit(
                &problem.output,
                json!({
                    "command": "influence",
                    "curvature": l.name(),
                    "damping": damping,
                    "datum": r.datum,
                    "ihvp": r.ihvp,
                    "influence": r.influence,
                    "solver": r.report,
                }),
                started,
            )
        }
        Command::Merge {
            model,
            params,
            data,
            curvature,
            kfac_flavor,
            samples,
            seed,
            damping,
            mode,
            cg,
            output,
        } => {
            if data.len() != 1 && data.len() != params.len() {
                return Err(Failure::usage(format!(
                    "give one --data per --params file or a single shared one ({} params, {} data)",
                    params.len(),
                    data.len()
                )));
            }
            let spec = spec_of(curvature, kfac_flavor, samples, seed)?;
            let mut thetas = Vec::with_capacity(params.len());
            let mut fishers: Vec<OperatorRef> = Vec::with_capacity(params.len());
            let mut layout = None;
            for (t, p) in params.iter().enumerate() {
                let d = &data[if data.len() == 1 { 0 } else { t }];
                let (risk, ps) = io::load_problem(&model, p, d)?;
                thetas.push(risk.layout().flatten(&ps)?);
                fishers.push(curvature_operator(&risk, &ps, spec)?);
                layout.get_or_insert_with(|| risk.layout().clone());
            }
            let merge_mode = match mode {
                MergeArg::Full => MergeMode::Full(cg_options(&cg)),
                MergeArg::Diagonal => MergeMode::Diagonal(DiagSource::Exact),
            };
            let merged = fisher_merge(&thetas, &fishers, damping, merge_mode)?;
            let list = layout.expect("at least one task").unflatten(&merged)?;
            let mut report = io::params_to_value(&list);
            report["curvature"] = json!(spec_name(&spec));
            report["damping"] = json!(damping);
            report["tasks"] = json!(params.len());
            emit(&output, report, started)
        }
        Command::Prune {
            problem,
            mode,
            damping,
            indices,
            estimator,
            inverse,
            budget,
            cg,
        } => {
            let l = Loaded::new(&problem, Curvature::Hessian)?;
            let prune_mode = match mode {
                PruneArg::Diagonal => {
                    if damping.is_some() || indices.is_some() {
                        return Err(Failure::usage(
                            "--damping and --indices apply only to --mode full",
                        ));
                    }
                    PruneMode::Diagonal(diag_source(estimator, budget, problem.seed))
                }
                PruneArg::Full => PruneMode::Full {
                    damping: damping
                        .ok_or_else(|| Failure::usage("--mode full needs --damping"))?,
                    indices,
                    method: match inverse {
                        InverseArg::PerIndex => InverseDiagonal::PerIndex,
                        InverseArg::Xdiag => InverseDiagonal::Xdiag {
                            budget,
                            seed: problem.seed,
                        },
                    },
                    cg: cg_options(&cg),
                },
            };
            let s = prune_with(l.operator()?, &l.theta()?, &prune_mode)?;
            let mut report = json!({
                "command": "prune",
                "curvature": l.name(),
                "mode": match mode { PruneArg::Diagonal => "diagonal", PruneArg::Full => "full" },
                "seed": problem.seed,
                "indices": s.indices,
                "scores": s.scores,
                "flagged": s.flagged,
            });
            if let Some(u) = s.updates {
                report["updates"] = json!(u);
            }
            emit(&problem.output, report, started)
        }
        Command::Overlap { problem, k, tol } => {
            let l = Loaded::new(&problem, Curvature::Hessian)?;
            let g = l.risk.layout().flatten(&l.risk.gradient(&l.params)?)?;
            let opts = EigshOptions {
                tol,
                seed: problem.seed,
                ..Default::default()
            };
            let o = overlap_with(l.operator()?.as_ref(), &g, k, &opts)?;
            emit(
                &problem.output,
                json!({
                    "command": "overlap",
                    "curvature": l.name(),
                    "k": k,
                    "seed": problem.seed,
                    "overlap": o.value,
                    "zero_gradient": o.zero_gradient,
                    "eigenvalues": o.eigenvalues,
                }),
                started,
            )
        }
        Command::CheckDeterministic { problem, tolerance } => {
            let l = Loaded::new(&problem, Curvature::Ggn)?;
            let op = l.operator()?;
            let r = check_deterministic(op.as_ref(), &l.risk, &l.params, problem.seed, tolerance);
            let deviations: Map<String, Value> = r
                .deviations
                .iter()
                .map(|(k, v)| (k.clone(), json!(v)))
                .collect();
            let report = json!({
                "command": "check-deterministic",
                "curvature": l.name(),
                "tolerance": tolerance,
                "passed": r.passed,
                "first_mismatch": r.first_mismatch,
                "deviations": deviations,
                "error": r.error,
            });
            emit(&problem.output, report.clone(), started)?;
            if r.passed {
                return Ok(());
            }
            let what = r
                .first_mismatch
                .clone()
                .or_else(|| r.error.clone())
                .unwrap_or_else(|| "unknown".into());
            let mut context = Map::new();
            context.insert("kind".into(), json!("nondeterministic"));
            context.insert("first_mismatch".into(), json!(r.first_mismatch));
            context.insert("deviations".into(), report["deviations"].clone());
            Err(Failure {
                message: format!("determinism check failed: {what}"),
                context,
                code: 1,
            })
        }
        Command::Bench {
            problem,
            curvatures,
            repeats,
        } => {
            if problem.curvature.is_some() {
                return Err(Failure::usage("bench takes --curvatures, not --curvature"));
            }
            let (risk, params) = io::load_problem(&problem.model, &problem.params, &problem.data)?;
            let specs = curvatures
                .iter()
                .map(|c| {
                    let flavor = if *c == Curvature::Kfac {
                        problem.kfac_flavor
                    } else {
                        None
                    };
                    spec_of(
                        *c,
                        flavor,
                        problem.samples.filter(|_| {
                            *c == Curvature::McFisher || flavor == Some(KfacFlavorArg::Mc)
                        }),
                        problem.seed,
                    )
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let table = bench(&risk, &params, &specs, repeats)?;
            let mut report = json!({ "command": "bench", "params": risk.num_params(), "data": risk.dataset().len() });
            report["repeats"] = json!(table.repeats);
            report["rows"] = json!(table.rows);
            // Timings vary by nature; --timing only adds the total.
            emit(&problem.output, report, started)
        }
    }
}
