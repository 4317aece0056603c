use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use maxent_ebe::quadrature::{clenshaw_curtis_1d, smolyak_sparse_grid};
use maxent_ebe::{
    ebe_solve, empirical_moments, fit_rescale, newton_full_solve, BasisSet, Density, EbeConfig, Execution,
    MomentProblem, NewtonConfig, OrderMode, ProblemFile, QuadSpec, SampleSet, SolveReport,
};
use serde::{Deserialize, Serialize};

use crate::manifest::{sibling, RunManifest};
use crate::{Cli, Command, GlobalOpts, Method, OrderArg, QuadKind};

/// Level of the rule used to integrate out axes for marginals.
const MARGINAL_LEVEL: u32 = 9;
const DEFAULT_LEVEL: u32 = 8;
const DEFAULT_GRID: usize = 101;

/// What `solve` writes: the report plus everything `eval` needs.
#[derive(Debug, Serialize, Deserialize)]
pub struct SolveOutput {
    pub density: Density,
    pub report: SolveReport,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: String,
    pub converged: bool,
    pub retained: usize,
    pub moment_error: Option<f64>,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub reason: Option<String>,
}

pub fn run(cli: &Cli) -> Result<u8> {
    let g = &cli.global;
    match &cli.command {
        Command::Moments { input, order, output } => moments(g, input, *order, output),
        Command::Solve { problem, method, output, trace } => {
            let trace = trace.clone().unwrap_or_else(|| sibling(output, "trace.jsonl"));
            solve(g, problem, *method, output, &trace)
        }
        Command::Eval { report, output, points_per_axis, original, marginal } => {
            eval(g, report, output, *points_per_axis, *original, *marginal)
        }
        Command::Compare { problem, output } => compare(g, problem, output),
    }
}

fn exec(g: &GlobalOpts) -> Execution {
    if g.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn quad_override(g: &GlobalOpts) -> Option<QuadSpec> {
    match (g.quad, g.level, g.grid_per_axis) {
        (Some(QuadKind::Uniform), _, m) | (None, None, m @ Some(_)) => {
            Some(QuadSpec::Uniform { m: m.unwrap_or(DEFAULT_GRID) })
        }
        (Some(QuadKind::Sparse), l, _) => Some(QuadSpec::Sparse { level: l.unwrap_or(DEFAULT_LEVEL) }),
        (None, Some(level), _) => Some(QuadSpec::Sparse { level }),
        (None, None, None) => None,
    }
}

fn ebe_config(g: &GlobalOpts) -> Result<EbeConfig> {
    let mut cfg = match &g.config {
        Some(path) => {
            let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            serde_json::from_reader(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))?
        }
        None => EbeConfig::default(),
    };
    if let Some(v) = g.tol1 {
        cfg.tol_newton = v;
    }
    if let Some(v) = g.tol2 {
        cfg.tol_predictor = v;
    }
    if let Some(v) = g.lambda_min {
        cfg.lambda_min = v;
    }
    if let Some(v) = g.seed {
        cfg.seed = v;
    }
    if let Some(o) = g.order_mode {
        cfg.order = match o {
            OrderArg::Canonical => OrderMode::Canonical,
            OrderArg::Convexity => OrderMode::Convexity,
            OrderArg::User => OrderMode::User,
        };
    }
    Ok(cfg)
}

fn newton_config(g: &GlobalOpts, damped: bool) -> NewtonConfig {
    let mut cfg = if damped { NewtonConfig::damped() } else { NewtonConfig::default() };
    if let Some(v) = g.tol2 {
        cfg.tol = v;
    }
    cfg
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn load_problem(g: &GlobalOpts, path: &Path) -> Result<MomentProblem> {
    let mut file: ProblemFile = read_json(path)?;
    if let Some(q) = quad_override(g) {
        file.quad = q;
    }
    Ok(MomentProblem::from_file(file)?.with_execution(exec(g)))
}

fn moments(g: &GlobalOpts, input: &Path, order: u32, output: &Path) -> Result<u8> {
    let f = File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let samples = SampleSet::read_csv(BufReader::new(f)).with_context(|| format!("reading {}", input.display()))?;
    let rescale = fit_rescale(&samples)?;
    let basis = BasisSet::enumerate(samples.dimension(), order)?;
    let targets = empirical_moments(&samples, &rescale, &basis, exec(g))?;
    let quad = quad_override(g).unwrap_or(QuadSpec::Sparse { level: DEFAULT_LEVEL });
    let file = ProblemFile { basis, targets, quad, rescale: Some(rescale) };
    write_json(output, &file)?;
    let mut m = RunManifest::new("moments", serde_json::json!({ "order": order, "quad": quad }), None);
    m.inputs.push(input.to_path_buf());
    m.outputs.push(output.to_path_buf());
    m.write_beside(output)?;
    Ok(0)
}

fn solve(g: &GlobalOpts, problem_path: &Path, method: Method, output: &Path, trace_path: &Path) -> Result<u8> {
    let problem = load_problem(g, problem_path)?;
    let (report, config) = match method {
        Method::Ebe => {
            let cfg = ebe_config(g)?;
            (ebe_solve(&problem, &cfg)?, serde_json::to_value(&cfg)?)
        }
        Method::Newton | Method::NewtonDamped => {
            let cfg = newton_config(g, method == Method::NewtonDamped);
            let value = serde_json::to_value(&cfg)?;
            match newton_full_solve(&problem, &cfg) {
                Ok(r) => (r, value),
                Err(d) => bail!("{d}"),
            }
        }
    };
    let density = Density {
        basis: problem.basis().clone(),
        lambda: report.lambda.clone(),
        z: report.z,
        rescale: problem.rescale().cloned(),
    };
    // timing goes to the manifest so that reports are reproducible
    let out = SolveOutput { density, report: report.without_timing() };
    write_json(output, &out)?;
    let tf = File::create(trace_path).with_context(|| format!("creating {}", trace_path.display()))?;
    let mut tw = BufWriter::new(tf);
    out.report.write_trace_jsonl(&mut tw)?;
    tw.flush()?;

    let mut m = RunManifest::new(
        "solve",
        serde_json::json!({ "method": format!("{method:?}"), "solver": config, "quad": problem.rule().spec() }),
        g.seed.or(Some(ebe_config(g)?.seed)),
    );
    m.inputs.push(problem_path.to_path_buf());
    m.outputs.extend([output.to_path_buf(), trace_path.to_path_buf()]);
    m.write_beside(output)?;

    for d in &out.report.discarded {
        eprintln!("discarded constraint {} {:?}: {:?}", d.index, d.exponents, d.reason);
    }
    Ok(if out.report.all_retained() { 0 } else { 2 })
}

/// Regular grid with `m` points per axis over `[lo_k, hi_k]`.
fn grid(lo: &[f64], hi: &[f64], m: usize) -> Vec<f64> {
    let d = lo.len();
    let axis = |k: usize, i: usize| {
        if i + 1 == m {
            hi[k]
        } else {
            lo[k] + (hi[k] - lo[k]) * i as f64 / (m - 1) as f64
        }
    };
    let total = m.pow(d as u32);
    let mut pts = Vec::with_capacity(total * d);
    for flat in 0..total {
        let mut rem = flat;
        let mut idx = vec![0; d];
        for k in (0..d).rev() {
            idx[k] = rem % m;
            rem /= m;
        }
        pts.extend(idx.iter().enumerate().map(|(k, &i)| axis(k, i)));
    }
    pts
}

fn eval(g: &GlobalOpts, report: &Path, output: &Path, m: usize, original: bool, marginal: bool) -> Result<u8> {
    if m < 2 {
        bail!("points per axis must be at least 2");
    }
    let solved: SolveOutput = read_json(report)?;
    let dens = solved.density;
    let d = dens.dimension();
    let (lo, hi) = match (&dens.rescale, original) {
        (Some(r), true) => (r.lo.clone(), r.hi.clone()),
        _ => (vec![-1.0; d], vec![1.0; d]),
    };
    let pts = grid(&lo, &hi, m);
    let vals = dens.eval_many(&pts, original, exec(g));
    let f = File::create(output).with_context(|| format!("creating {}", output.display()))?;
    dens.write_csv(&pts, &vals, BufWriter::new(f))?;
    let mut manifest = RunManifest::new(
        "eval",
        serde_json::json!({ "points_per_axis": m, "original": original, "marginal": marginal }),
        None,
    );
    manifest.inputs.push(report.to_path_buf());
    manifest.outputs.push(output.to_path_buf());
    if marginal {
        let rule = if d > 1 { Some(smolyak_sparse_grid(d - 1, MARGINAL_LEVEL)?) } else { None };
        let rule = match rule {
            Some(r) => r,
            None => clenshaw_curtis_1d(1)?,
        };
        for axis in 0..d {
            let xs = grid(&lo[axis..=axis], &hi[axis..=axis], m);
            let vals = dens.marginal(axis, &xs, &rule, original)?;
            let path = sibling(output, &format!("marginal{}.csv", axis + 1));
            let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
            writeln!(w, "x{},density", axis + 1)?;
            for (x, v) in xs.iter().zip(&vals) {
                writeln!(w, "{x},{v:e}")?;
            }
            w.flush()?;
            manifest.outputs.push(path);
        }
    }
    manifest.write_beside(output)?;
    Ok(0)
}

fn compare(g: &GlobalOpts, problem_path: &Path, output: &Path) -> Result<u8> {
    let problem = load_problem(g, problem_path)?;
    let mut rows = Vec::new();
    let ebe_cfg = EbeConfig { record_trace: false, ..ebe_config(g)? };
    let r = ebe_solve(&problem, &ebe_cfg)?;
    rows.push(CompareRow {
        method: "ebe".into(),
        converged: r.all_retained(),
        retained: r.retained.len(),
        moment_error: Some(r.moment_error),
        iterations: r.iterations,
        wall_time_s: r.wall_time_s,
        reason: (!r.all_retained()).then(|| format!("{} constraints discarded", r.discarded.len())),
    });
    for damped in [false, true] {
        let cfg = NewtonConfig { record_trace: false, ..newton_config(g, damped) };
        let name = if damped { "newton-damped" } else { "newton" };
        rows.push(match newton_full_solve(&problem, &cfg) {
            Ok(r) => CompareRow {
                method: name.into(),
                converged: true,
                retained: r.retained.len(),
                moment_error: Some(r.moment_error),
                iterations: r.iterations,
                wall_time_s: r.wall_time_s,
                reason: None,
            },
            Err(d) => CompareRow {
                method: name.into(),
                converged: false,
                retained: 0,
                moment_error: None,
                iterations: d.iterations,
                wall_time_s: 0.0,
                reason: Some(d.reason),
            },
        });
    }
    println!("{:<14} {:>9} {:>8} {:>14} {:>6}", "method", "converged", "retained", "moment_error", "iters");
    for row in &rows {
        let me = row.moment_error.map(|v| format!("{v:.3e}")).unwrap_or_else(|| "diverge".into());
        println!("{:<14} {:>9} {:>8} {:>14} {:>6}", row.method, row.converged, row.retained, me, row.iterations);
    }
    write_json(output, &rows)?;
    let mut m = RunManifest::new("compare", serde_json::to_value(&ebe_cfg)?, Some(ebe_cfg.seed));
    m.inputs.push(problem_path.to_path_buf());
    m.outputs.push(output.to_path_buf());
    m.write_beside(output)?;
    Ok(0)
}
