//! Discrete adjoint of the state system, boundary multiplier traces and
//! linearized state solves.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::controls::ControlTriple;
use crate::discrete::{Jacobian, Problem};
use crate::grid::{BoundaryField, BoxGrid, ScalarField, VelocityField};
use crate::params::{CostWeights, NondimParams};
use crate::state_solver::{basic_state, FlatState, StateSolution};
use crate::{Error, Result};

/// Tracking targets of the cost functional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    pub u_d: VelocityField,
    pub theta_d: ScalarField,
}

impl Targets {
    pub fn zero(grid: &BoxGrid) -> Self {
        Self { u_d: VelocityField::zeros(grid), theta_d: ScalarField::zeros(grid) }
    }

    pub fn basic_state(grid: &BoxGrid, p: &NondimParams) -> Result<Self> {
        let s = basic_state(grid, p)?;
        Ok(Self { u_d: s.u, theta_d: s.theta })
    }

    pub fn check(&self, grid: &BoxGrid) -> Result<()> {
        let z = VelocityField::zeros(grid);
        let same = (0..3).all(|c| self.u_d.c[c].dim() == z.c[c].dim());
        if !same || self.theta_d.data.dim() != grid.shape() {
            return Err(Error::DimensionMismatch("targets"));
        }
        if !self.u_d.is_finite() || !self.theta_d.is_finite() {
            return Err(Error::NonFinite("targets".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjointState {
    pub lambda1: VelocityField,
    pub pi: ScalarField,
    pub lambda2: ScalarField,
    /// Velocity multiplier trace on `Gamma_0`, per unit area.
    pub lambda3: BoundaryField,
    /// Temperature multiplier trace on the bottom, per unit area.
    pub lambda4: BoundaryField,
    /// Derivative of the reduced cost in the flat control coordinates
    /// `[g, phi1, phi2]`.
    pub cost_derivative: Vec<f64>,
}

/// Partial derivatives of the tracking and vorticity terms with respect to
/// the full velocity and the cell temperatures.
pub fn tracking_partials(problem: &Problem, u: &[f64], theta: &[f64], targets: &Targets, w: &CostWeights) -> (Vec<f64>, Vec<f64>) {
    let ud = targets.u_d.to_flat();
    let curl = problem.curl_gram_apply(u);
    let ju = (0..u.len())
        .map(|i| w.gamma1 * curl[i] + w.gamma2 * problem.node_vol[i] * (u[i] - ud[i]))
        .collect();
    let vol = problem.grid.cell_volume();
    let jt = theta.iter().zip(targets.theta_d.as_slice()).map(|(t, d)| w.gamma3 * vol * (t - d)).collect();
    (ju, jt)
}

/// Velocity with the Dirichlet values of the controls, extended temperature,
/// and the linearization there.
pub fn linearize(problem: &Problem, state: &StateSolution, controls: &ControlTriple) -> Result<(FlatState, Vec<f64>, Jacobian)> {
    problem.check_controls(controls)?;
    let mut s = FlatState::from_solution(state);
    if s.u.len() != problem.idx.len() || s.theta.len() != problem.ncells() {
        return Err(Error::DimensionMismatch("state"));
    }
    for (b, v) in problem.boundary_values(&controls.g).iter().enumerate() {
        s.u[problem.bnd_nodes[b]] = *v;
    }
    let text = problem.theta_ext(&s.theta, &controls.phi2.values);
    let jac = problem.jacobian(&s.u, &text)?;
    Ok((s, text, jac))
}

/// Adjoint solve around a converged state.
pub fn solve_adjoint(
    problem: &Problem,
    state: &StateSolution,
    controls: &ControlTriple,
    targets: &Targets,
    w: &CostWeights,
) -> Result<AdjointState> {
    targets.check(&problem.grid)?;
    let (s, _, jac) = linearize(problem, state, controls)?;
    solve_adjoint_with(problem, &s, controls, targets, w, &jac)
}

pub fn solve_adjoint_with(
    problem: &Problem,
    s: &FlatState,
    controls: &ControlTriple,
    targets: &Targets,
    w: &CostWeights,
    jac: &Jacobian,
) -> Result<AdjointState> {
    let grid = &problem.grid;
    let (ju, jt) = tracking_partials(problem, &s.u, &s.theta, targets, w);
    let ni = problem.n_int();
    let mut rhs = problem.interior_part(&ju);
    rhs.extend_from_slice(&jt);
    let zero_c = vec![0.0; problem.ncells()];
    let sol = jac.solver.solve_transpose(&rhs, &zero_c, 0.0)?;
    let lam_u = &sol.x[..ni];
    let lam_t = &sol.x[ni..];
    if sol.x.iter().chain(&sol.p).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("adjoint solve".into()));
    }

    let mut lam_bnd = problem.boundary_part(&ju);
    for (b, v) in jac.b_u.matvec_t(&sol.x).iter().enumerate() {
        lam_bnd[b] -= v;
    }
    for (b, v) in jac.b_u_cont.matvec_t(&sol.p).iter().enumerate() {
        lam_bnd[b] -= v;
    }
    let grams = problem.grams();
    let mut dg = problem.boundary_values_transpose(&lam_bnd);
    for c in 0..3 {
        let gc = grams.g.apply(&controls.g.component(c));
        for (f, v) in gc.iter().enumerate() {
            dg[f * 3 + c] += w.gamma4 * v;
        }
    }
    let b1 = jac.b_phi1.matvec_t(&sol.x);
    let dphi1: Vec<f64> = grams
        .phi1
        .apply(&controls.phi1.values)
        .iter()
        .zip(&b1)
        .map(|(gv, b)| w.gamma5 * gv - b)
        .collect();
    let b2 = jac.b_phi2.matvec_t(&sol.x);
    let dphi2: Vec<f64> = grams
        .phi2
        .apply(&controls.phi2.values)
        .iter()
        .zip(&b2)
        .map(|(gv, b)| w.gamma6 * gv - b)
        .collect();

    let gamma0 = problem.partition.gamma0.clone();
    let trace = problem.boundary_trace(&lam_bnd);
    let mut lambda3 = BoundaryField::zeros(gamma0.clone(), 3);
    for (f, face) in gamma0.faces.iter().enumerate() {
        for c in 0..3 {
            lambda3.values[f * 3 + c] = trace[f * 3 + c] / face.area;
        }
    }
    let bottom = Arc::clone(&problem.bottom);
    let mut lambda4 = BoundaryField::zeros(bottom.clone(), 1);
    for (f, face) in bottom.faces.iter().enumerate() {
        lambda4.values[f] = -b2[f] / face.area;
    }
    let lam_full = problem.full_velocity(lam_u, &vec![0.0; problem.n_bnd()]);
    let mut cost_derivative = dg;
    cost_derivative.extend(dphi1);
    cost_derivative.extend(dphi2);
    Ok(AdjointState {
        lambda1: VelocityField::from_flat(grid, &lam_full)?,
        pi: ScalarField::from_flat(grid, &sol.p)?,
        lambda2: ScalarField::from_flat(grid, lam_t)?,
        lambda3,
        lambda4,
        cost_derivative,
    })
}

/// Solution of the linearized state system for a control direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Tangent {
    /// Full velocity perturbation including its boundary values.
    pub h1: Vec<f64>,
    /// Cell temperature perturbation.
    pub h2: Vec<f64>,
    /// Bottom temperature perturbation.
    pub tau: Vec<f64>,
}

pub fn linearized_state_with(problem: &Problem, jac: &Jacobian, dir: &ControlTriple) -> Result<Tangent> {
    let du_bnd = problem.boundary_values(&dir.g);
    let du_bnd = if problem.u0.is_some() {
        let zero_u0 = problem.boundary_values(&dir.g.scaled(0.0));
        du_bnd.iter().zip(&zero_u0).map(|(a, b)| a - b).collect()
    } else {
        du_bnd
    };
    let mut f = jac.b_u.matvec(&du_bnd);
    for (a, b) in f.iter_mut().zip(jac.b_phi2.matvec(&dir.phi2.values)) {
        *a += b;
    }
    for (a, b) in f.iter_mut().zip(jac.b_phi1.matvec(&dir.phi1.values)) {
        *a += b;
    }
    f.iter_mut().for_each(|v| *v = -*v);
    let c: Vec<f64> = jac.b_u_cont.matvec(&du_bnd).iter().map(|v| -v).collect();
    let sol = jac.solver.solve(&f, &c, 0.0)?;
    let ni = jac.n_int;
    Ok(Tangent {
        h1: problem.full_velocity(&sol.x[..ni], &du_bnd),
        h2: sol.x[ni..].to_vec(),
        tau: dir.phi2.values.clone(),
    })
}

/// Linearized state `(h1, h2)` for the control direction `dir`.
pub fn linearized_state(
    problem: &Problem,
    state: &StateSolution,
    controls: &ControlTriple,
    dir: &ControlTriple,
) -> Result<(VelocityField, ScalarField)> {
    problem.check_controls(dir)?;
    let (_, _, jac) = linearize(problem, state, controls)?;
    let t = linearized_state_with(problem, &jac, dir)?;
    Ok((VelocityField::from_flat(&problem.grid, &t.h1)?, ScalarField::from_flat(&problem.grid, &t.h2)?))
}

/// `min{Pr - C (Pr (M + R) + ||u||_1 + ||theta||_1^2), 1/2 - C Pr (R + M)}`.
pub fn beta0_formula(p: &NondimParams, u_h1: f64, theta_h1: f64, c_ref: f64) -> f64 {
    let a = p.pr - c_ref * (p.pr * (p.ma + p.ra) + u_h1 + theta_h1 * theta_h1);
    let b = 0.5 - c_ref * p.pr * (p.ra + p.ma);
    a.min(b)
}

pub fn regular_point_beta0(problem: &Problem, state: &StateSolution, c_ref: f64) -> Result<f64> {
    if !(c_ref > 0.0) {
        return Err(Error::InvalidParams(format!("C_ref must be positive, got {c_ref}")));
    }
    let s = FlatState::from_solution(state);
    let uh = problem.velocity_h1_norm(&s.u);
    let th = problem.scalar_h1_norm(&s.theta);
    Ok(beta0_formula(&problem.params, uh, th, c_ref))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use crate::state_solver::{picard_solve, PicardOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize) -> (Problem, ControlTriple, StateSolution) {
        let p = NondimParams { pr: 5.0, ra: 0.5, ma: 0.5, ..NondimParams::default() };
        let prob = Problem::standard(BoxGrid::cube(n).unwrap(), p).unwrap();
        let mut c = prob.conduction_controls();
        for (i, f) in c.g.region.faces.clone().iter().enumerate() {
            if f.wall == crate::grid::Wall::YLo {
                c.g.values[i * 3] = 0.3 * (std::f64::consts::PI * f.centroid[2]).sin();
            }
        }
        c.phi1.values.iter_mut().enumerate().for_each(|(i, v)| *v = 0.1 * ((i % 5) as f64 - 2.0));
        let (s, rep) = picard_solve(&prob, &c, &PicardOptions { tol: 1e-13, ..Default::default() }).unwrap();
        assert!(rep.converged);
        (prob, c, s)
    }

    #[test]
    fn transposed_solve_is_the_adjoint_operator() {
        let (prob, c, s) = setup(5);
        let (_, _, jac) = linearize(&prob, &s, &c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = jac.solver.primal_len();
        let f: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let zc = vec![0.0; prob.ncells()];
        let x = jac.solver.solve(&f, &zc, 0.0).unwrap().x;
        let y = jac.solver.solve_transpose(&g, &zc, 0.0).unwrap().x;
        let (a, b) = (dot(&x, &g), dot(&f, &y));
        assert!((a - b).abs() < 1e-9 * a.abs().max(1.0), "{a} {b}");
    }

    #[test]
    fn tangent_matches_nonlinear_difference() {
        let (prob, c, s) = setup(5);
        let mut dir = prob.zero_controls();
        dir.phi2.values.iter_mut().enumerate().for_each(|(i, v)| *v = ((i % 3) as f64) - 1.0);
        dir.phi1.values.iter_mut().for_each(|v| *v = 0.5);
        let (h1, h2) = linearized_state(&prob, &s, &c, &dir).unwrap();
        let opts = PicardOptions { tol: 1e-13, ..Default::default() };
        let mut errs = Vec::new();
        for eps in [1e-2, 1e-3] {
            let cp = c.from_flat_like(&c.to_flat().iter().zip(dir.to_flat()).map(|(a, b)| a + eps * b).collect::<Vec<_>>()).unwrap();
            let (sp, _) = picard_solve(&prob, &cp, &opts).unwrap();
            let du: Vec<f64> = sp.u.to_flat().iter().zip(s.u.to_flat()).zip(h1.to_flat()).map(|((a, b), h)| a - b - eps * h).collect();
            let dt: Vec<f64> = sp.theta.as_slice().iter().zip(s.theta.as_slice()).zip(h2.as_slice()).map(|((a, b), h)| a - b - eps * h).collect();
            errs.push(prob.velocity_h1_norm(&du) + prob.scalar_h1_norm(&dt));
        }
        let ratio = errs[0] / errs[1];
        assert!(ratio > 50.0, "{errs:?}");
        let doubled = dir.scaled(2.0);
        let (h1d, _) = linearized_state(&prob, &s, &c, &doubled).unwrap();
        assert!(h1d.sub(&h1.scaled(2.0)).max_abs() < 1e-10 * h1.max_abs().max(1e-300));
    }

    #[test]
    fn zero_tracking_weights_give_zero_adjoint() {
        let (prob, c, s) = setup(4);
        let w = CostWeights { gamma1: 0.0, gamma2: 0.0, gamma3: 0.0, gamma4: 1.0, gamma5: 1.0, gamma6: 1.0 };
        let adj = solve_adjoint(&prob, &s, &c, &Targets::zero(&prob.grid), &w).unwrap();
        assert_eq!(adj.lambda1.max_abs(), 0.0);
        assert_eq!(adj.lambda2.max_abs(), 0.0);
        assert_eq!(adj.lambda3.max_abs(), 0.0);
        assert_eq!(adj.lambda4.max_abs(), 0.0);
    }

    #[test]
    fn beta0_shape() {
        let p = NondimParams { ra: 0.0, ma: 0.0, pr: 4.0, ..NondimParams::default() };
        assert_eq!(beta0_formula(&p, 0.0, 0.0, 1.0), 0.5);
        let big_m = NondimParams { ma: 100.0, ..p };
        assert!(beta0_formula(&big_m, 0.0, 0.0, 1.0) < 0.0);
        assert!(beta0_formula(&p, 10.0, 0.0, 1.0) <= beta0_formula(&p, 1.0, 0.0, 1.0));
    }
}
