//! Nonlinear state solver: boundary lifts, frozen-advection linear solves
//! and the damped Picard iteration.

use serde::{Deserialize, Serialize};

use crate::controls::ControlTriple;
use crate::discrete::Problem;
use crate::grid::{BoxGrid, ScalarField, VelocityField};
use crate::params::NondimParams;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSolution {
    pub u: VelocityField,
    /// Mean-zero pressure.
    pub p: ScalarField,
    pub theta: ScalarField,
}

impl StateSolution {
    pub fn zeros(grid: &BoxGrid) -> Self {
        Self { u: VelocityField::zeros(grid), p: ScalarField::zeros(grid), theta: ScalarField::zeros(grid) }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.p.is_finite() && self.theta.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub picard_iters: usize,
    #[serde(rename = "residuals")]
    pub residual_history: Vec<f64>,
    pub apriori_lhs: f64,
    pub apriori_rhs: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// Initial relaxation factor in `(0, 1]`.
    pub damping: f64,
    /// Constant of the monitored a-priori bound.
    pub apriori_c: f64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iters: 100, damping: 1.0, apriori_c: 1.0 }
    }
}

impl PicardOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iters == 0 || !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "picard options tol={}, max_iters={}, damping={}",
                self.tol, self.max_iters, self.damping
            )));
        }
        Ok(())
    }
}

/// Flat working form of a state.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatState {
    pub u: Vec<f64>,
    pub theta: Vec<f64>,
    pub p: Vec<f64>,
    pub mu: f64,
}

impl FlatState {
    pub fn to_solution(&self, grid: &BoxGrid) -> Result<StateSolution> {
        Ok(StateSolution {
            u: VelocityField::from_flat(grid, &self.u)?,
            p: ScalarField::from_flat(grid, &self.p)?,
            theta: ScalarField::from_flat(grid, &self.theta)?,
        })
    }

    pub fn from_solution(s: &StateSolution) -> Self {
        Self { u: s.u.to_flat(), theta: s.theta.as_slice().to_vec(), p: s.p.as_slice().to_vec(), mu: 0.0 }
    }
}

/// Exact conduction state sampled on the grid.
pub fn basic_state(grid: &BoxGrid, p: &NondimParams) -> Result<StateSolution> {
    if !(p.bi > 0.0) {
        return Err(Error::InvalidParams(format!("Biot number must be positive, got {}", p.bi)));
    }
    let (p1, p2) = p.basic_pressure_coefficients();
    let theta = ScalarField::from_fn(grid, |x| p.basic_temperature(x[2]));
    let mut pressure = ScalarField::from_fn(grid, |x| p1 * x[2] + p2 * x[2] * x[2]);
    let mean = pressure.mean();
    pressure.data.mapv_inplace(|v| v - mean);
    Ok(StateSolution { u: VelocityField::zeros(grid), p: pressure, theta })
}

fn check_flux(problem: &Problem, c: &ControlTriple) -> Result<()> {
    let flux = problem.data_flux(&c.g);
    let scale = 1.0 + c.g.max_abs() + problem.u0.as_ref().map_or(0.0, |u| u.max_abs());
    if flux.abs() > 1e-10 * scale * problem.partition.gamma0.area() {
        return Err(Error::FluxIncompatible(flux));
    }
    Ok(())
}

/// Divergence-free Stokes extension of the velocity data.
pub fn lift_velocity(problem: &Problem, controls: &ControlTriple) -> Result<VelocityField> {
    Ok(VelocityField::from_flat(&problem.grid, &lift_velocity_flat(problem, controls)?)?)
}

fn lift_velocity_flat(problem: &Problem, controls: &ControlTriple) -> Result<Vec<f64>> {
    problem.check_controls(controls)?;
    check_flux(problem, controls)?;
    let ub = problem.boundary_values(&controls.g);
    let zero = vec![0.0; problem.idx.len()];
    if ub.iter().all(|v| *v == 0.0) {
        return Ok(zero);
    }
    let (u, _, _) = problem.solve_oseen(&zero, &[], &ub, false)?;
    Ok(u)
}

/// Harmonic temperature with the bottom, lateral and Robin conditions.
pub fn lift_temperature(problem: &Problem, controls: &ControlTriple) -> Result<ScalarField> {
    problem.check_controls(controls)?;
    let zero = vec![0.0; problem.idx.len()];
    let t = problem.solve_temperature(&zero, &controls.phi1.values, &controls.phi2.values)?;
    ScalarField::from_flat(&problem.grid, &t)
}

/// One application of the fixed-point map: temperature with frozen `u_bar`,
/// then the Oseen system forced by that temperature.
pub fn solve_linearized_flat(problem: &Problem, u_bar: &[f64], controls: &ControlTriple) -> Result<FlatState> {
    let theta = problem.solve_temperature(u_bar, &controls.phi1.values, &controls.phi2.values)?;
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("temperature solve".into()));
    }
    let ub = problem.boundary_values(&controls.g);
    let (u, p, mu) = problem.solve_oseen(u_bar, &theta, &ub, true)?;
    if u.iter().chain(&p).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("velocity solve".into()));
    }
    Ok(FlatState { u, theta, p, mu })
}

pub fn solve_linearized(
    problem: &Problem,
    u_bar: &VelocityField,
    controls: &ControlTriple,
) -> Result<(VelocityField, ScalarField)> {
    problem.check_controls(controls)?;
    let s = solve_linearized_flat(problem, &u_bar.to_flat(), controls)?;
    Ok((VelocityField::from_flat(&problem.grid, &s.u)?, ScalarField::from_flat(&problem.grid, &s.theta)?))
}

/// Damped Picard iteration on the flat unknowns.
pub fn picard_solve_flat(problem: &Problem, controls: &ControlTriple, opts: &PicardOptions) -> Result<(FlatState, SolveReport)> {
    opts.validate()?;
    let mut u = lift_velocity_flat(problem, controls)?;
    let mut theta = lift_temperature(problem, controls)?.as_slice().to_vec();
    let mut omega = opts.damping;
    let mut history: Vec<f64> = Vec::new();
    let mut state = FlatState { u: u.clone(), theta: theta.clone(), p: vec![0.0; problem.ncells()], mu: 0.0 };
    let mut converged = false;
    let mut iters = 0;
    for _ in 0..opts.max_iters {
        iters += 1;
        let step = match solve_linearized_flat(problem, &u, controls) {
            Ok(s) => s,
            Err(Error::NonFinite(_) | Error::LinearSolver(_)) => break,
            Err(e) => return Err(e),
        };
        let u_new: Vec<f64> = u.iter().zip(&step.u).map(|(a, b)| a + omega * (b - a)).collect();
        let du: Vec<f64> = u_new.iter().zip(&u).map(|(a, b)| a - b).collect();
        let dt: Vec<f64> = step.theta.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let num = problem.velocity_h1_norm(&du) + problem.scalar_h1_norm(&dt);
        let den = problem.velocity_h1_norm(&u_new) + problem.scalar_h1_norm(&step.theta);
        let change = if num == 0.0 { 0.0 } else { num / den.max(f64::MIN_POSITIVE) };
        if !change.is_finite() || !u_new.iter().all(|x| x.is_finite()) {
            break;
        }
        if history.last().is_some_and(|&prev| change > prev) && omega > 1.0 / 64.0 {
            omega *= 0.5;
        }
        history.push(change);
        u = u_new;
        theta = step.theta.clone();
        state = FlatState { u: u.clone(), theta: theta.clone(), p: step.p, mu: step.mu };
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    let lhs = problem.velocity_h1_norm(&state.u) + problem.scalar_h1_norm(&state.theta);
    let data: f64 = problem.data_norms(controls).iter().sum::<f64>() + problem.params.b.abs();
    let report = SolveReport {
        picard_iters: iters,
        residual_history: history,
        apriori_lhs: lhs,
        apriori_rhs: opts.apriori_c * data,
        converged,
    };
    Ok((state, report))
}

/// Picard solve. Non-convergence, including a breakdown of the linearized
/// solves, is reported through `converged = false` with the last finite
/// iterate.
pub fn picard_solve(problem: &Problem, controls: &ControlTriple, opts: &PicardOptions) -> Result<(StateSolution, SolveReport)> {
    let (s, r) = picard_solve_flat(problem, controls, opts)?;
    Ok((s.to_solution(&problem.grid)?, r))
}

/// Residuals of the discrete system in a scale-free dual norm: each row is
/// divided by the discrete `H^1` norm of its nodal test function. The first
/// value also covers the continuity rows (divided by the cell volume).
pub fn weak_residual(problem: &Problem, state: &StateSolution, controls: &ControlTriple) -> Result<(f64, f64)> {
    problem.check_controls(controls)?;
    let s = FlatState::from_solution(state);
    if s.u.len() != problem.idx.len() || s.theta.len() != problem.ncells() {
        return Err(Error::DimensionMismatch("state"));
    }
    let mut u = s.u.clone();
    for (b, v) in problem.boundary_values(&controls.g).iter().enumerate() {
        u[problem.bnd_nodes[b]] = *v;
    }
    let theta_ext = problem.theta_ext(&s.theta, &controls.phi2.values);
    let mean_mu = -problem.div.matvec(&u).iter().sum::<f64>() / problem.ncells() as f64;
    let r = problem.residual(&u, &theta_ext, &s.p, mean_mu, &controls.phi1.values);
    let bnd_mismatch = s.u.iter().zip(&u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let mut kdiag = vec![0.0; problem.idx.len()];
    for (row, d) in kdiag.iter_mut().enumerate() {
        *d = problem.kv.row(row).filter(|(c, _)| *c == row).map(|(_, v)| v).sum();
    }
    let mom = problem
        .int_nodes
        .iter()
        .zip(&r.momentum)
        .map(|(&id, v)| v.abs() / (kdiag[id] + problem.node_vol[id]).sqrt())
        .fold(0.0, f64::max);
    let vol = problem.grid.cell_volume();
    let cont = r.continuity.iter().map(|v| v.abs() / vol).fold(0.0, f64::max);
    let mut tdiag = vec![vol; problem.ncells()];
    for row in 0..problem.ncells() {
        tdiag[row] += problem.temp_static.row(row).filter(|(c, _)| *c == row).map(|(_, v)| v).sum::<f64>();
    }
    let temp = r.temperature.iter().zip(&tdiag).map(|(v, d)| v.abs() / d.sqrt()).fold(0.0, f64::max);
    Ok((mom.max(cont).max(bnd_mismatch), temp))
}

/// `Pr - C (Pr (M + R) + 1) (||u0|| + ||g|| + ||phi1|| + ||phi2||)`.
pub fn uniqueness_gap(problem: &Problem, controls: &ControlTriple, c_ref: f64) -> Result<f64> {
    if !(c_ref > 0.0) {
        return Err(Error::InvalidParams(format!("C_ref must be positive, got {c_ref}")));
    }
    problem.check_controls(controls)?;
    let p = &problem.params;
    let data: f64 = problem.data_norms(controls).iter().sum();
    Ok(uniqueness_gap_formula(p, data, c_ref))
}

pub fn uniqueness_gap_formula(p: &NondimParams, data_norm_sum: f64, c_ref: f64) -> f64 {
    p.pr - c_ref * (p.pr * (p.ma + p.ra) + 1.0) * data_norm_sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoxGrid;

    fn problem(n: usize, p: NondimParams) -> Problem {
        Problem::standard(BoxGrid::cube(n).unwrap(), p).unwrap()
    }

    #[test]
    fn basic_state_values() {
        let grid = BoxGrid::cube(4).unwrap();
        let p = NondimParams { ra: 2.0, b: -1.0, bi: 1.0, theta_c: 1.0, ..NondimParams::default() };
        assert_eq!(p.basic_pressure_coefficients(), (1.0, -0.5));
        let s = basic_state(&grid, &p).unwrap();
        assert!((s.theta.data[[0, 0, 3]] - (1.0 - 0.875 / 2.0)).abs() < 1e-15);
        assert!(s.p.mean().abs() < 1e-14);
        let cold = NondimParams { theta_c: 0.0, ..p };
        assert_eq!(cold.basic_pressure_coefficients(), (-1.0, 0.0));
        assert!(basic_state(&grid, &NondimParams { bi: 0.0, ..p }).is_err());
    }

    #[test]
    fn sampled_basic_state_is_a_discrete_solution() {
        let p = NondimParams { pr: 3.0, ra: 0.7, ma: 0.4, bi: 2.0, theta_c: 1.3, ..NondimParams::default() };
        let prob = problem(6, p);
        let s = basic_state(&prob.grid, &p).unwrap();
        let c = prob.conduction_controls();
        let (rm, rt) = weak_residual(&prob, &s, &c).unwrap();
        assert!(rm < 1e-12 && rt < 1e-12, "{rm} {rt}");
        let mut bad = s.clone();
        bad.theta.data[[2, 2, 2]] += 1e-3;
        let (_, rt2) = weak_residual(&prob, &bad, &c).unwrap();
        assert!(rt2 > 1e-6);
        let (_, rt3) = weak_residual(&prob, &StateSolution::zeros(&prob.grid), &c).unwrap();
        assert!(rt3 > 1e-3);
    }

    #[test]
    fn zero_data_lifts_vanish() {
        let prob = problem(4, NondimParams::default());
        let c = prob.zero_controls();
        assert_eq!(lift_velocity(&prob, &c).unwrap().max_abs(), 0.0);
        assert_eq!(lift_temperature(&prob, &c).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn tangential_lift_is_divergence_free_and_exact_on_the_wall() {
        let prob = problem(6, NondimParams::default());
        let mut c = prob.zero_controls();
        let faces = c.g.region.faces.clone();
        for (i, f) in faces.iter().enumerate() {
            if f.wall == crate::grid::Wall::XLo {
                let (y, z) = (f.centroid[1], f.centroid[2]);
                c.g.values[i * 3 + 1] = (std::f64::consts::PI * z).sin() * y * (1.0 - y);
            }
        }
        let u = lift_velocity_flat(&prob, &c).unwrap();
        let div = prob.div.matvec(&u);
        assert!(div.iter().all(|d| d.abs() < 1e-10 * prob.grid.cell_volume()));
        let ub = prob.boundary_values(&c.g);
        assert_eq!(prob.boundary_part(&u), ub);
        assert!(ub.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn conduction_data_converge_to_basic_state() {
        let p = NondimParams { pr: 2.0, ra: 0.5, ma: 0.5, ..NondimParams::default() };
        let prob = problem(6, p);
        let (s, rep) = picard_solve(&prob, &prob.conduction_controls(), &PicardOptions::default()).unwrap();
        assert!(rep.converged && rep.picard_iters <= 2, "{rep:?}");
        let exact = basic_state(&prob.grid, &p).unwrap();
        assert!(s.u.max_abs() < 1e-10);
        assert!((&s.theta.data - &exact.theta.data).iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn neutral_data_give_zero_state_in_one_iteration() {
        let p = NondimParams { ra: 0.0, ma: 0.0, b: 0.0, ..NondimParams::default() };
        let prob = problem(4, p);
        let (s, rep) = picard_solve(&prob, &prob.zero_controls(), &PicardOptions::default()).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.picard_iters, 1);
        assert_eq!(s.u.max_abs(), 0.0);
        assert_eq!(s.theta.max_abs(), 0.0);
    }

    #[test]
    fn gap_formula() {
        let prob = problem(4, NondimParams::default());
        assert_eq!(uniqueness_gap(&prob, &prob.zero_controls(), 3.0).unwrap(), prob.params.pr);
        let p = NondimParams::default();
        let a = p.pr - uniqueness_gap_formula(&p, 1.0, 0.5);
        let b = p.pr - uniqueness_gap_formula(&p, 2.0, 0.5);
        assert!((b - 2.0 * a).abs() < 1e-14);
        assert!(uniqueness_gap(&prob, &prob.zero_controls(), 0.0).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(8))]
        #[test]
        fn picard_limit_is_a_divergence_free_fixed_point(
            ra in 0.0f64..2.0, ma in 0.0f64..2.0, amp in 0.0f64..0.3, phase in 0.0f64..6.0, offset in -0.5f64..0.5,
        ) {
            let p = NondimParams { pr: 2.0, ra, ma, ..NondimParams::default() };
            let prob = problem(4, p);
            let mut c = prob.conduction_controls();
            let faces = c.g.region.faces.clone();
            for (i, f) in faces.iter().enumerate() {
                let x = f.centroid;
                for k in 0..3 {
                    c.g.values[i * 3 + k] = amp * (phase + 3.0 * x[0] + 2.0 * x[1] + (k as f64) * x[2]).sin();
                }
            }
            c.g.impose_normal_constraints();
            c.phi1.values.iter_mut().for_each(|v| *v += offset);
            let opts = PicardOptions { tol: 1e-12, max_iters: 200, ..PicardOptions::default() };
            let (s, rep) = picard_solve_flat(&prob, &c, &opts).unwrap();
            proptest::prop_assert!(rep.converged, "{:?}", rep);
            let div = prob.div.matvec(&s.u);
            proptest::prop_assert!(div.iter().all(|d| d.abs() <= 1e-8));
            let next = solve_linearized_flat(&prob, &s.u, &c).unwrap();
            let gap = next.u.iter().zip(&s.u).chain(next.theta.iter().zip(&s.theta)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            proptest::prop_assert!(gap <= 1e-9, "{}", gap);
        }
    }
}
