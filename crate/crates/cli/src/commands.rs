//! The four run modes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use rbm_core::adjoint_solver::regular_point_beta0;
use rbm_core::discrete::Problem;
use rbm_core::identities::{run_identity_suite, SuiteOptions};
use rbm_core::io;
use rbm_core::optimizer::{
    multiplier_bound_check, projected_gradient, second_order_quotient, variational_inequality_slack, ControlSpace,
};
use rbm_core::state_solver::{picard_solve, uniqueness_gap, weak_residual, SolveReport, StateSolution};
use rbm_core::{Error, NondimParams};

use crate::config::ScenarioConfig;
use crate::manifest::Artifacts;
use crate::CliError;

/// Success or numerical non-convergence; usage and configuration errors
/// travel as [`CliError`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    NotConverged,
}

fn numerical(e: Error) -> CliError {
    match e {
        Error::InvalidParams(_) | Error::InfeasibleSet(_) | Error::ConstraintViolation(_) | Error::FluxIncompatible(_) => {
            CliError::Config(e.to_string())
        }
        Error::Io(e) => CliError::Io(e),
        other => CliError::Numerical(other.to_string()),
    }
}

fn write_state(out: &mut Artifacts, cfg: &ScenarioConfig, prob: &Problem, state: &StateSolution) -> Result<(), CliError> {
    if cfg.output.vtk {
        out.write("state.vtk", &io::state_vtk(&prob.grid, state))?;
    }
    if cfg.output.csv {
        out.write("state.csv", &io::state_csv(&prob.grid, state).map_err(numerical)?)?;
        out.write("velocity_nodes.csv", &io::velocity_faces_csv(&prob.grid, &state.u).map_err(numerical)?)?;
    }
    Ok(())
}

pub fn verify(cfg: &ScenarioConfig, out: &mut Artifacts) -> Result<Outcome, CliError> {
    let grid = cfg.grid()?;
    let opts = SuiteOptions {
        seed: cfg.optimizer.seed,
        samples: cfg.diagnostics.identity_samples,
        corruption: cfg.diagnostics.corrupt,
        ..SuiteOptions::default()
    };
    let checks = run_identity_suite(&grid, &opts).map_err(numerical)?;
    for c in &checks {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {} value={:e} tol={:e}", c.name, c.value, c.tol);
    }
    out.write("identities.json", &io::to_json(&checks).map_err(numerical)?)?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(Outcome::Success)
    } else {
        Err(CliError::IdentityFailed(failed.join(", ")))
    }
}

#[derive(Serialize)]
struct SolveSummary<'a> {
    report: &'a SolveReport,
    weak_residual_momentum: f64,
    weak_residual_temperature: f64,
    velocity_max: f64,
    velocity_h1: f64,
    temperature_h1: f64,
    uniqueness_gap: f64,
    beta0: f64,
}

pub fn solve(cfg: &ScenarioConfig, out: &mut Artifacts) -> Result<Outcome, CliError> {
    let prob = cfg.problem()?;
    let controls = cfg.initial_controls(&prob)?;
    let (state, report) = picard_solve(&prob, &controls, &cfg.picard()).map_err(numerical)?;
    write_state(out, cfg, &prob, &state)?;
    let (rm, rt) = weak_residual(&prob, &state, &controls).map_err(numerical)?;
    let d = &cfg.diagnostics;
    let summary = SolveSummary {
        report: &report,
        weak_residual_momentum: rm,
        weak_residual_temperature: rt,
        velocity_max: state.u.max_abs(),
        velocity_h1: state.u.h1_norm(&prob.grid).map_err(numerical)?,
        temperature_h1: state.theta.h1_norm(&prob.grid).map_err(numerical)?,
        uniqueness_gap: uniqueness_gap(&prob, &controls, d.uniqueness_c_ref).map_err(numerical)?,
        beta0: regular_point_beta0(&prob, &state, d.beta0_c_ref).map_err(numerical)?,
    };
    out.write("solve_report.json", &io::to_json(&summary).map_err(numerical)?)?;
    println!(
        "picard iterations {}, converged {}, max |u| {:e}",
        report.picard_iters, report.converged, summary.velocity_max
    );
    Ok(if report.converged { Outcome::Success } else { Outcome::NotConverged })
}

#[derive(Serialize)]
struct OptimizeSummary<'a> {
    report: &'a rbm_core::optimizer::OptimalityReport,
    cost: &'a rbm_core::optimizer::CostBreakdown,
    beta0: f64,
    vi_slack: Option<[f64; 3]>,
}

pub fn optimize(cfg: &ScenarioConfig, out: &mut Artifacts) -> Result<Outcome, CliError> {
    let prob = cfg.problem()?;
    let controls = cfg.initial_controls(&prob)?;
    let targets = cfg.targets(&prob)?;
    let w = cfg.weights.weights();
    let opts = cfg.optimizer_options();
    let mut res = projected_gradient(&prob, &controls, &targets, &w, &opts).map_err(numerical)?;
    let d = &cfg.diagnostics;
    let beta0 = regular_point_beta0(&prob, &res.state, d.beta0_c_ref).map_err(numerical)?;
    if beta0 > 0.0 {
        let (lhs, rhs) =
            multiplier_bound_check(&prob, &res.state, &res.adjoint, &targets, &w, beta0, d.c1_ref).map_err(numerical)?;
        res.report.multiplier_bound_lhs = lhs;
        res.report.multiplier_bound_rhs = rhs;
    }
    if d.second_order_samples > 0 {
        let q = second_order_quotient(&prob, &res.state, &res.adjoint, &res.controls, &w, d.second_order_samples, opts.seed)
            .map_err(numerical)?;
        res.report.second_order_min_quotient = Some(q);
    }
    let vi_slack = if d.vi_samples > 0 {
        let space = ControlSpace::new(&prob).map_err(numerical)?;
        Some(variational_inequality_slack(&space, &res.controls, &res.adjoint, d.vi_samples, opts.seed))
    } else {
        None
    };
    write_state(out, cfg, &prob, &res.state)?;
    out.write("cost_history.csv", &io::cost_history_csv(&res.report).map_err(numerical)?)?;
    out.write("control_g.csv", &io::boundary_field_csv(&res.controls.g).map_err(numerical)?)?;
    out.write("control_phi1.csv", &io::boundary_field_csv(&res.controls.phi1).map_err(numerical)?)?;
    out.write("control_phi2.csv", &io::boundary_field_csv(&res.controls.phi2).map_err(numerical)?)?;
    let summary = OptimizeSummary { report: &res.report, cost: &res.cost, beta0, vi_slack };
    out.write("optimality_report.json", &io::to_json(&summary).map_err(numerical)?)?;
    println!(
        "iterations {}, cost {:e}, stationarity {:?}, converged {}",
        res.report.iterations,
        res.cost.total,
        res.report.vi_residuals(),
        res.report.converged
    );
    Ok(if res.report.converged { Outcome::Success } else { Outcome::NotConverged })
}

/// Parameter axis of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Pr,
    Ra,
    Ma,
    Bi,
    B,
}

impl Axis {
    fn parse(name: &str) -> Result<Self, CliError> {
        Ok(match name.trim() {
            "pr" => Axis::Pr,
            "ra" => Axis::Ra,
            "ma" => Axis::Ma,
            "bi" => Axis::Bi,
            "b" => Axis::B,
            other => return Err(CliError::Config(format!("unknown sweep axis `{other}` (pr, ra, ma, bi, b)"))),
        })
    }

    fn apply(self, p: &NondimParams, v: f64) -> NondimParams {
        let mut q = *p;
        match self {
            Axis::Pr => q.pr = v,
            Axis::Ra => q.ra = v,
            Axis::Ma => q.ma = v,
            Axis::Bi => q.bi = v,
            Axis::B => q.b = v,
        }
        q
    }
}

/// `name=v1,v2,...`.
pub fn parse_axis_spec(spec: &str) -> Result<(Axis, Vec<f64>), CliError> {
    let (name, list) =
        spec.split_once('=').ok_or_else(|| CliError::Config(format!("axis spec `{spec}` is not of the form name=v1,v2")))?;
    let axis = Axis::parse(name)?;
    let values = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|e| CliError::Config(format!("axis value `{s}`: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((axis, values))
}

struct SweepRow {
    params: NondimParams,
    iters: usize,
    converged: bool,
    u_h1: f64,
    theta_h1: f64,
    gap: f64,
    beta0: f64,
    error: Option<String>,
}

fn sweep_point(cfg: &ScenarioConfig, params: NondimParams) -> SweepRow {
    let mut row = SweepRow {
        params,
        iters: 0,
        converged: false,
        u_h1: f64::NAN,
        theta_h1: f64::NAN,
        gap: f64::NAN,
        beta0: f64::NAN,
        error: None,
    };
    let run = |row: &mut SweepRow| -> Result<(), CliError> {
        params.validate().map_err(numerical)?;
        let prob = cfg.problem_with(params)?;
        let controls = cfg.initial_controls(&prob)?;
        row.gap = uniqueness_gap(&prob, &controls, cfg.diagnostics.uniqueness_c_ref).map_err(numerical)?;
        let (state, rep) = picard_solve(&prob, &controls, &cfg.picard()).map_err(numerical)?;
        row.iters = rep.picard_iters;
        row.converged = rep.converged;
        row.u_h1 = state.u.h1_norm(&prob.grid).map_err(numerical)?;
        row.theta_h1 = state.theta.h1_norm(&prob.grid).map_err(numerical)?;
        row.beta0 = regular_point_beta0(&prob, &state, cfg.diagnostics.beta0_c_ref).map_err(numerical)?;
        Ok(())
    };
    if let Err(e) = run(&mut row) {
        row.error = Some(e.to_string());
    }
    row
}

pub fn sweep(cfg: &ScenarioConfig, axis_spec: Option<&str>, threads: Option<usize>, out: &mut Artifacts) -> Result<Outcome, CliError> {
    let (axis, values) = match axis_spec {
        Some(s) => parse_axis_spec(s)?,
        None => {
            let name = cfg.sweep.axis.as_deref().ok_or_else(|| CliError::Config("no sweep axis given".into()))?;
            (Axis::parse(name)?, cfg.sweep.values.clone())
        }
    };
    if values.is_empty() {
        return Err(CliError::Config("sweep axis has no values".into()));
    }
    let base = cfg.nondim()?;
    let points: Vec<NondimParams> = values.iter().map(|v| axis.apply(&base, *v)).collect();
    let workers = threads.or(cfg.sweep.threads).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    let rows: Vec<SweepRow> = pool.install(|| points.par_iter().map(|p| sweep_point(cfg, *p)).collect());

    let mut w = csv::Writer::from_writer(Vec::new());
    let header = ["point", "pr", "ra", "b", "ma", "bi", "picard_iters", "converged", "u_h1", "theta_h1", "uniqueness_gap", "beta0", "flag"];
    w.write_record(header).map_err(|e| CliError::Numerical(e.to_string()))?;
    let mut summary = BTreeMap::new();
    for (n, r) in rows.iter().enumerate() {
        let flag = match (&r.error, r.converged) {
            (Some(e), _) => format!("failed: {e}"),
            (None, false) => "not_converged".to_string(),
            (None, true) => String::new(),
        };
        let p = &r.params;
        let rec = [
            n.to_string(),
            p.pr.to_string(),
            p.ra.to_string(),
            p.b.to_string(),
            p.ma.to_string(),
            p.bi.to_string(),
            r.iters.to_string(),
            r.converged.to_string(),
            format!("{:e}", r.u_h1),
            format!("{:e}", r.theta_h1),
            format!("{:e}", r.gap),
            format!("{:e}", r.beta0),
            flag.clone(),
        ];
        w.write_record(&rec).map_err(|e| CliError::Numerical(e.to_string()))?;
        summary.insert(n, flag);
    }
    let bytes = w.into_inner().map_err(|e| CliError::Numerical(e.to_string()))?;
    let text = String::from_utf8(bytes).expect("csv output is UTF-8");
    out.write("sweep.csv", &text)?;
    let mut line = String::new();
    for (n, flag) in &summary {
        let _ = write!(line, "point {n}: {}; ", if flag.is_empty() { "ok" } else { flag });
    }
    println!("{}", line.trim_end_matches("; "));
    Ok(Outcome::Success)
}

pub fn out_dir<'a>(cfg: &'a ScenarioConfig, flag: Option<&'a Path>) -> &'a Path {
    flag.unwrap_or(&cfg.output.dir)
}
