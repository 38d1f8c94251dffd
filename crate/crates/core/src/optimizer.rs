//! Cost functional, Riesz-mapped reduced gradient, projections and the
//! projected-gradient loop with its optimality diagnostics.

use std::sync::Arc;

use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adjoint_solver::{linearize, linearized_state_with, solve_adjoint_with, AdjointState, Targets};
use crate::controls::{ConstraintSet, ControlTriple};
use crate::discrete::{Grams, Problem};
use crate::grid::{BoundaryField, GramFactor, Wall};
use crate::linalg::dot;
use crate::params::CostWeights;
use crate::state_solver::{picard_solve_flat, FlatState, PicardOptions, StateSolution};
use crate::{Error, Result};

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct CostBreakdown {
    pub vorticity_term: f64,
    pub velocity_tracking: f64,
    pub temperature_tracking: f64,
    pub g_norm_term: f64,
    pub phi1_norm_term: f64,
    pub phi2_norm_term: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct OptimalityReport {
    pub vi_residual_g: f64,
    pub vi_residual_phi1: f64,
    pub vi_residual_phi2: f64,
    pub cost_history: Vec<f64>,
    pub step_history: Vec<f64>,
    /// Largest of the three stationarity residuals at each accepted iterate.
    pub stationarity_history: Vec<f64>,
    pub second_order_min_quotient: Option<f64>,
    pub multiplier_bound_lhs: f64,
    pub multiplier_bound_rhs: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl OptimalityReport {
    pub fn vi_residuals(&self) -> [f64; 3] {
        [self.vi_residual_g, self.vi_residual_phi1, self.vi_residual_phi2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub armijo_c1: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub initial_step: f64,
    pub picard: PicardOptions,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 200,
            seed: 0,
            armijo_c1: 1e-4,
            backtrack: 0.5,
            max_backtracks: 30,
            initial_step: 1.0,
            picard: PicardOptions { tol: 1e-13, ..PicardOptions::default() },
        }
    }
}

pub fn cost(problem: &Problem, state: &StateSolution, controls: &ControlTriple, targets: &Targets, w: &CostWeights) -> Result<CostBreakdown> {
    targets.check(&problem.grid)?;
    problem.check_controls(controls)?;
    let s = FlatState::from_solution(state);
    Ok(cost_flat(problem, &s, controls, targets, w))
}

pub fn cost_flat(problem: &Problem, s: &FlatState, controls: &ControlTriple, targets: &Targets, w: &CostWeights) -> CostBreakdown {
    let ud = targets.u_d.to_flat();
    let du: Vec<f64> = s.u.iter().zip(&ud).map(|(a, b)| a - b).collect();
    let vol = problem.grid.cell_volume();
    let dt: f64 = s.theta.iter().zip(targets.theta_d.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * vol;
    let grams = problem.grams();
    let mut c = CostBreakdown {
        vorticity_term: 0.5 * w.gamma1 * problem.curl_norm_sq(&s.u),
        velocity_tracking: 0.5 * w.gamma2 * problem.velocity_l2_sq(&du),
        temperature_tracking: 0.5 * w.gamma3 * dt,
        g_norm_term: 0.5 * w.gamma4 * grams.g.norm_sq(&controls.g),
        phi1_norm_term: 0.5 * w.gamma5 * grams.phi1.norm_sq(&controls.phi1),
        phi2_norm_term: 0.5 * w.gamma6 * grams.phi2.norm_sq(&controls.phi2),
        total: 0.0,
    };
    c.total = c.vorticity_term
        + c.velocity_tracking
        + c.temperature_tracking
        + c.g_norm_term
        + c.phi1_norm_term
        + c.phi2_norm_term;
    c
}

/// Control space `[g, phi1, phi2]` with the boundary inner products, the
/// admissible linear constraints on `g` and the Riesz map.
pub struct ControlSpace {
    grams: Arc<Grams>,
    template: ControlTriple,
    ng: usize,
    n1: usize,
    g_dofs: [Vec<usize>; 3],
    g_factors: [GramFactor; 3],
    /// Flux weights of the normal bottom component of `g` on the free
    /// dofs of component 3.
    flux: Option<Vec<f64>>,
    phi1: GramFactor,
    phi2: GramFactor,
    dense_g: Mat<f64>,
    dense_phi1: Mat<f64>,
    dense_phi2: Mat<f64>,
}

fn spd_solve(a: &Mat<f64>, rows: &[usize], b: &[f64]) -> Option<Vec<f64>> {
    use faer::prelude::*;
    let m = rows.len();
    let sub = Mat::from_fn(m, m, |i, j| a[(rows[i], rows[j])]);
    let llt = sub.llt(Side::Lower).ok()?;
    let mut x = Mat::from_fn(m, 1, |i, _| b[i]);
    llt.solve_in_place(x.as_mut());
    Some((0..m).map(|i| x[(i, 0)]).collect())
}

fn mat_vec(a: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    (0..x.len()).map(|i| (0..x.len()).map(|j| a[(i, j)] * x[j]).sum()).collect()
}

/// Minimizer of `(x - t)' G (x - t)` over `lo <= x <= hi` by a primal-dual
/// active-set iteration. `G` is a symmetric M-matrix here, for which the
/// iteration stops after finitely many steps.
fn metric_box_projection(gram: &Mat<f64>, t: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let n = t.len();
    if t.iter().all(|x| (lo..=hi).contains(x)) {
        return t.to_vec();
    }
    let gt = mat_vec(gram, t);
    let mut x: Vec<f64> = t.iter().map(|v| v.clamp(lo, hi)).collect();
    let residual = |x: &[f64]| -> Vec<f64> {
        let gx = mat_vec(gram, x);
        gt.iter().zip(&gx).map(|(a, b)| a - b).collect()
    };
    let mut lambda = residual(&x);
    let mut state: Vec<i8> = vec![2; n];
    for _ in 0..(n + 2) {
        let next: Vec<i8> = (0..n)
            .map(|i| {
                if lambda[i] + (x[i] - hi) > 0.0 {
                    1
                } else if lambda[i] + (x[i] - lo) < 0.0 {
                    -1
                } else {
                    0
                }
            })
            .collect();
        if next == state {
            break;
        }
        state = next;
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 0).collect();
        for i in 0..n {
            match state[i] {
                1 => x[i] = hi,
                -1 => x[i] = lo,
                _ => {}
            }
        }
        let rhs: Vec<f64> = free
            .iter()
            .map(|&i| gt[i] - (0..n).filter(|&j| state[j] != 0).map(|j| gram[(i, j)] * x[j]).sum::<f64>())
            .collect();
        match spd_solve(gram, &free, &rhs) {
            Some(y) => free.iter().zip(y).for_each(|(&i, v)| x[i] = v),
            None => break,
        }
        lambda = residual(&x);
        free.iter().for_each(|&i| lambda[i] = 0.0);
    }
    x.iter().map(|v| v.clamp(lo, hi)).collect()
}

impl ControlSpace {
    pub fn new(problem: &Problem) -> Result<Self> {
        let grams = problem.grams();
        let template = problem.zero_controls();
        let faces = &problem.partition.gamma01.faces;
        let dofs = |c: usize| -> Vec<usize> {
            (0..faces.len()).filter(|&f| !(faces[f].wall.is_lateral() && faces[f].wall.normal_axis() == c)).collect()
        };
        let g_dofs = [dofs(0), dofs(1), dofs(2)];
        let g_factors = [grams.g.factor(&g_dofs[0])?, grams.g.factor(&g_dofs[1])?, grams.g.factor(&g_dofs[2])?];
        let flux: Vec<f64> = g_dofs[2]
            .iter()
            .map(|&f| if faces[f].wall == Wall::Bottom { faces[f].area } else { 0.0 })
            .collect();
        let flux = flux.iter().any(|v| *v != 0.0).then_some(flux);
        let all1: Vec<usize> = (0..problem.lateral.len()).collect();
        let all2: Vec<usize> = (0..problem.bottom.len()).collect();
        Ok(Self {
            dense_g: grams.g.matrix(),
            dense_phi1: grams.phi1.matrix(),
            dense_phi2: grams.phi2.matrix(),
            phi1: grams.phi1.factor(&all1)?,
            phi2: grams.phi2.factor(&all2)?,
            ng: template.g.values.len(),
            n1: template.phi1.values.len(),
            grams,
            template,
            g_dofs,
            g_factors,
            flux,
        })
    }

    pub fn len(&self) -> usize {
        self.ng + self.n1 + self.template.phi2.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn split<'a>(&self, v: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        (&v[..self.ng], &v[self.ng..self.ng + self.n1], &v[self.ng + self.n1..])
    }

    fn g_component(&self, g: &[f64], c: usize) -> Vec<f64> {
        g.iter().skip(c).step_by(3).copied().collect()
    }

    /// Squared norms of the three blocks.
    pub fn block_norms_sq(&self, v: &[f64]) -> [f64; 3] {
        let (g, p1, p2) = self.split(v);
        let gn: f64 = (0..3).map(|c| {
            let x = self.g_component(g, c);
            self.grams.g.inner(&x, &x)
        })
        .sum();
        [gn, self.grams.phi1.inner(p1, p1), self.grams.phi2.inner(p2, p2)]
    }

    pub fn norm(&self, v: &[f64]) -> f64 {
        self.block_norms_sq(v).iter().sum::<f64>().sqrt()
    }

    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let (ga, a1, a2) = self.split(a);
        let (gb, b1, b2) = self.split(b);
        let gi: f64 = (0..3).map(|c| self.grams.g.inner(&self.g_component(ga, c), &self.g_component(gb, c))).sum();
        gi + self.grams.phi1.inner(a1, b1) + self.grams.phi2.inner(a2, b2)
    }

    /// Riesz representative of a derivative given in flat coordinates:
    /// the admissible `G` with `<G, d>` equal to `dual . d` for every
    /// admissible `d`.
    pub fn riesz(&self, dual: &[f64]) -> Vec<f64> {
        let (g, p1, p2) = self.split(dual);
        let mut out = vec![0.0; self.len()];
        for c in 0..3 {
            let dofs = &self.g_dofs[c];
            let rhs: Vec<f64> = dofs.iter().map(|&f| g[f * 3 + c]).collect();
            let mut y = self.g_factors[c].solve(&rhs);
            if c == 2 {
                if let Some(a) = &self.flux {
                    let ga = self.g_factors[2].solve(a);
                    let s = dot(a, &y) / dot(a, &ga);
                    y.iter_mut().zip(&ga).for_each(|(yi, gi)| *yi -= s * gi);
                }
            }
            for (k, &f) in dofs.iter().enumerate() {
                out[f * 3 + c] = y[k];
            }
        }
        out[self.ng..self.ng + self.n1].copy_from_slice(&self.phi1.solve(p1));
        out[self.ng + self.n1..].copy_from_slice(&self.phi2.solve(p2));
        out
    }

    fn ball(&self, v: &mut [f64], radius: f64, center: f64, block: usize) {
        let d: Vec<f64> = v.iter().map(|x| x - center).collect();
        let n = match block {
            0 => (0..3).map(|c| {
                let x = self.g_component(&d, c);
                self.grams.g.inner(&x, &x)
            })
            .sum::<f64>(),
            1 => self.grams.phi1.inner(&d, &d),
            _ => self.grams.phi2.inner(&d, &d),
        }
        .sqrt();
        if n > radius {
            let s = radius / n;
            v.iter_mut().zip(&d).for_each(|(x, di)| *x = center + s * di);
        }
    }

    fn impose_g(&self, g: &mut [f64]) {
        let mut f = self.template.g.clone();
        f.values.copy_from_slice(g);
        f.impose_normal_constraints();
        g.copy_from_slice(&f.values);
    }

    /// Nearest point in the `g` metric satisfying the linear constraints,
    /// optionally also inside `[lo, hi]`.
    fn project_g(&self, g: &mut [f64], bounds: Option<(f64, f64)>) {
        let n = self.dense_g.nrows();
        for c in 0..3 {
            let free = &self.g_dofs[c];
            let mut is_free = vec![false; n];
            free.iter().for_each(|&f| is_free[f] = true);
            let fixed: Vec<usize> = (0..n).filter(|&f| !is_free[f] && g[f * 3 + c] != 0.0).collect();
            let mut target: Vec<f64> = free.iter().map(|&f| g[f * 3 + c]).collect();
            if !fixed.is_empty() {
                let rhs: Vec<f64> = free
                    .iter()
                    .map(|&i| fixed.iter().map(|&j| self.dense_g[(i, j)] * g[j * 3 + c]).sum())
                    .collect();
                let shift = self.g_factors[c].solve(&rhs);
                target.iter_mut().zip(&shift).for_each(|(t, s)| *t += s);
            }
            let sub = || Mat::from_fn(free.len(), free.len(), |i, j| self.dense_g[(free[i], free[j])]);
            let hyper = |x: &mut Vec<f64>| {
                if let (2, Some(a)) = (c, &self.flux) {
                    let ga = self.g_factors[2].solve(a);
                    let s = dot(a, x) / dot(a, &ga);
                    x.iter_mut().zip(&ga).for_each(|(xi, gi)| *xi -= s * gi);
                }
            };
            let y = match bounds {
                None => {
                    let mut y = target;
                    hyper(&mut y);
                    y
                }
                Some((lo, hi)) if c != 2 || self.flux.is_none() => metric_box_projection(&sub(), &target, lo, hi),
                Some((lo, hi)) => {
                    let sub = sub();
                    let (mut x, mut p, mut q) = (target.clone(), vec![0.0; target.len()], vec![0.0; target.len()]);
                    for _ in 0..50 {
                        let xp: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + b).collect();
                        let y = metric_box_projection(&sub, &xp, lo, hi);
                        p = xp.iter().zip(&y).map(|(a, b)| a - b).collect();
                        let mut z: Vec<f64> = y.iter().zip(&q).map(|(a, b)| a + b).collect();
                        hyper(&mut z);
                        q = y.iter().zip(&q).zip(&z).map(|((a, b), c)| a + b - c).collect();
                        let change = x.iter().zip(&z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                        x = z;
                        if change <= 1e-14 * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
                            break;
                        }
                    }
                    x
                }
            };
            (0..n).filter(|&f| !is_free[f]).for_each(|f| g[f * 3 + c] = 0.0);
            free.iter().zip(y).for_each(|(&f, v)| g[f * 3 + c] = v);
        }
    }

    fn project_block(&self, v: &mut [f64], set: &ConstraintSet, block: usize) {
        let dense = match block {
            1 => &self.dense_phi1,
            _ => &self.dense_phi2,
        };
        let boxed = |v: &mut [f64], lo: f64, hi: f64| {
            if block == 0 {
                self.project_g(v, Some((lo, hi)));
            } else {
                let y = metric_box_projection(dense, v, lo, hi);
                v.copy_from_slice(&y);
            }
        };
        match *set {
            ConstraintSet::Unbounded => {
                if block == 0 {
                    self.project_g(v, None);
                }
            }
            ConstraintSet::Box { lo, hi } => boxed(v, lo, hi),
            ConstraintSet::Ball { radius, center } => {
                if block == 0 {
                    self.project_g(v, None);
                }
                self.ball(v, radius, center, block);
            }
            ConstraintSet::BoxBall { lo, hi, radius, center } => {
                for _ in 0..50 {
                    let before = v.to_vec();
                    boxed(v, lo, hi);
                    self.ball(v, radius, center, block);
                    let change = before.iter().zip(v.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    if change <= 1e-15 * (1.0 + before.iter().fold(0.0f64, |m, x| m.max(x.abs()))) {
                        break;
                    }
                }
            }
        }
    }

    /// Projection of flat controls onto the product of the three sets.
    pub fn project(&self, v: &[f64], sets: &crate::controls::ControlSets) -> Vec<f64> {
        let mut out = v.to_vec();
        let (ng, n1) = (self.ng, self.n1);
        self.project_block(&mut out[..ng], &sets.g, 0);
        self.project_block(&mut out[ng..ng + n1], &sets.phi1, 1);
        self.project_block(&mut out[ng + n1..], &sets.phi2, 2);
        out
    }

    /// Block norms of `c - P(c - grad)`.
    pub fn stationarity(&self, c: &[f64], grad: &[f64], sets: &crate::controls::ControlSets) -> [f64; 3] {
        let trial: Vec<f64> = c.iter().zip(grad).map(|(a, b)| a - b).collect();
        let p = self.project(&trial, sets);
        let d: Vec<f64> = c.iter().zip(&p).map(|(a, b)| a - b).collect();
        self.block_norms_sq(&d).map(f64::sqrt)
    }

    /// Random admissible direction with standard normal entries.
    pub fn random_direction(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut v: Vec<f64> = (0..self.len()).map(|_| standard_normal(rng)).collect();
        self.impose_g(&mut v[..self.ng]);
        v
    }

    pub fn block_ranges(&self) -> [std::ops::Range<usize>; 3] {
        [0..self.ng, self.ng..self.ng + self.n1, self.ng + self.n1..self.len()]
    }
}

/// Checks the sets and the feasibility of the controls.
pub fn check_feasible(space: &ControlSpace, controls: &ControlTriple) -> Result<()> {
    controls.validate()?;
    let v = controls.to_flat();
    let p = space.project(&v, &controls.sets);
    let d: Vec<f64> = v.iter().zip(&p).map(|(a, b)| a - b).collect();
    let dist = space.norm(&d);
    if dist > 1e-10 * (1.0 + space.norm(&v)) {
        return Err(Error::ConstraintViolation(format!("initial controls lie {dist:.3e} outside their sets")));
    }
    if let ConstraintSet::Ball { center, .. } | ConstraintSet::BoxBall { center, .. } = controls.sets.g {
        if center != 0.0 {
            return Err(Error::InfeasibleSet("the ball for g must be centered at zero".into()));
        }
    }
    Ok(())
}

/// Riesz-mapped reduced gradient `(G_g, G_phi1, G_phi2)`.
pub fn reduced_gradient(space: &ControlSpace, adjoint: &AdjointState) -> Vec<f64> {
    space.riesz(&adjoint.cost_derivative)
}

/// Projection of one boundary field onto a set, in the control-space norm.
pub fn project(problem: &Problem, set: &ConstraintSet, candidate: &BoundaryField) -> Result<BoundaryField> {
    set.validate()?;
    let space = ControlSpace::new(problem)?;
    let mut c = problem.zero_controls();
    let block = if candidate.region.faces == c.g.region.faces && candidate.ncomp == 3 {
        c.g = candidate.clone();
        c.sets.g = *set;
        0
    } else if candidate.region.faces == c.phi1.region.faces && candidate.ncomp == 1 {
        c.phi1 = candidate.clone();
        c.sets.phi1 = *set;
        1
    } else if candidate.region.faces == c.phi2.region.faces && candidate.ncomp == 1 {
        c.phi2 = candidate.clone();
        c.sets.phi2 = *set;
        2
    } else {
        return Err(Error::DimensionMismatch("candidate is not a control field"));
    };
    let p = space.project(&c.to_flat(), &c.sets);
    let r = space.block_ranges()[block].clone();
    let mut out = candidate.clone();
    out.values.copy_from_slice(&p[r]);
    Ok(out)
}

/// State, adjoint and gradient at one control point.
pub struct Evaluation {
    pub controls: ControlTriple,
    pub state: FlatState,
    pub cost: CostBreakdown,
    pub adjoint: AdjointState,
    pub gradient: Vec<f64>,
}

fn evaluate_state(problem: &Problem, controls: &ControlTriple, opts: &PicardOptions) -> Result<Option<FlatState>> {
    let (s, rep) = picard_solve_flat(problem, controls, opts)?;
    Ok(rep.converged.then_some(s))
}

pub fn evaluate(
    problem: &Problem,
    space: &ControlSpace,
    controls: &ControlTriple,
    targets: &Targets,
    w: &CostWeights,
    opts: &PicardOptions,
) -> Result<Evaluation> {
    let state = evaluate_state(problem, controls, opts)?
        .ok_or_else(|| Error::NotConverged("state solve at the current controls".into()))?;
    evaluate_at(problem, space, controls, state, targets, w)
}

fn evaluate_at(
    problem: &Problem,
    space: &ControlSpace,
    controls: &ControlTriple,
    state: FlatState,
    targets: &Targets,
    w: &CostWeights,
) -> Result<Evaluation> {
    let sol = state.to_solution(&problem.grid)?;
    let (s, _, jac) = linearize(problem, &sol, controls)?;
    let adjoint = solve_adjoint_with(problem, &s, controls, targets, w, &jac)?;
    let gradient = reduced_gradient(space, &adjoint);
    Ok(Evaluation { controls: controls.clone(), cost: cost_flat(problem, &s, controls, targets, w), state: s, adjoint, gradient })
}

/// Result of [`projected_gradient`].
pub struct OptimizationResult {
    pub controls: ControlTriple,
    pub state: StateSolution,
    pub adjoint: AdjointState,
    pub report: OptimalityReport,
    pub cost: CostBreakdown,
}

/// Projected gradient with Armijo backtracking and Barzilai-Borwein trial
/// steps.
pub fn projected_gradient(
    problem: &Problem,
    initial: &ControlTriple,
    targets: &Targets,
    w: &CostWeights,
    opts: &OptimizerOptions,
) -> Result<OptimizationResult> {
    targets.check(&problem.grid)?;
    problem.check_controls(initial)?;
    let space = ControlSpace::new(problem)?;
    check_feasible(&space, initial)?;
    let sets = initial.sets;
    let mut ev = evaluate(problem, &space, initial, targets, w, &opts.picard)?;
    let mut report = OptimalityReport { cost_history: vec![ev.cost.total], ..OptimalityReport::default() };
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut res = space.stationarity(&ev.controls.to_flat(), &ev.gradient, &sets);
    report.stationarity_history.push(res.iter().fold(0.0, |m: f64, r| m.max(*r)));
    let mut iters = 0;
    while iters < opts.max_iters && res.iter().any(|r| *r >= opts.tol) {
        iters += 1;
        let c = ev.controls.to_flat();
        let mut t = opts.initial_step;
        if let Some((pc, pg)) = &prev {
            let s: Vec<f64> = c.iter().zip(pc).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = ev.gradient.iter().zip(pg).map(|(a, b)| a - b).collect();
            let sy = space.inner(&s, &y);
            if sy > 0.0 {
                t = (space.inner(&s, &s) / sy).clamp(1e-8, 1e8);
            }
        }
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let trial: Vec<f64> = c.iter().zip(&ev.gradient).map(|(a, b)| a - t * b).collect();
            let pc = space.project(&trial, &sets);
            let delta: Vec<f64> = pc.iter().zip(&c).map(|(a, b)| a - b).collect();
            let decrease = dot(&ev.adjoint.cost_derivative, &delta);
            let ct = ev.controls.from_flat_like(&pc)?;
            match evaluate_state(problem, &ct, &opts.picard) {
                Ok(Some(s)) => {
                    let j = cost_flat(problem, &s, &ct, targets, w).total;
                    if j <= ev.cost.total + opts.armijo_c1 * decrease {
                        accepted = Some((ct, s));
                        break;
                    }
                }
                Ok(None) | Err(Error::NonFinite(_)) | Err(Error::LinearSolver(_)) => {}
                Err(e) => return Err(e),
            }
            t *= opts.backtrack;
        }
        let Some((ct, s)) = accepted else {
            break;
        };
        let next = evaluate_at(problem, &space, &ct, s, targets, w)?;
        prev = Some((c, std::mem::take(&mut ev.gradient)));
        ev = next;
        report.cost_history.push(ev.cost.total);
        report.step_history.push(t);
        res = space.stationarity(&ev.controls.to_flat(), &ev.gradient, &sets);
        report.stationarity_history.push(res.iter().fold(0.0, |m: f64, r| m.max(*r)));
    }
    report.iterations = iters;
    [report.vi_residual_g, report.vi_residual_phi1, report.vi_residual_phi2] = res;
    report.converged = res.iter().all(|r| *r < opts.tol);
    Ok(OptimizationResult {
        state: ev.state.to_solution(&problem.grid)?,
        controls: ev.controls,
        adjoint: ev.adjoint,
        report,
        cost: ev.cost,
    })
}

/// Smallest value over random feasible `c` of
/// `dJ . (c - c_hat) / ||c - c_hat||` per control block.
pub fn variational_inequality_slack(
    space: &ControlSpace,
    controls: &ControlTriple,
    adjoint: &AdjointState,
    samples: usize,
    seed: u64,
) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = controls.to_flat();
    let ranges = space.block_ranges();
    let mut out = [f64::INFINITY; 3];
    for _ in 0..samples {
        let dir = space.random_direction(&mut rng);
        let scale = 1.0 + space.norm(&c);
        let cand: Vec<f64> = c.iter().zip(&dir).map(|(a, d)| a + scale * d).collect();
        let feas = space.project(&cand, &controls.sets);
        for (b, r) in ranges.iter().enumerate() {
            let mut d = vec![0.0; c.len()];
            for i in r.clone() {
                d[i] = feas[i] - c[i];
            }
            let n = space.norm(&d);
            if n > 0.0 {
                let v = dot(&adjoint.cost_derivative, &d) / n;
                out[b] = out[b].min(v);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderSample {
    /// `L_zz[t, t] / ||t||^2`.
    pub quotient: f64,
    /// Control part of `||t||^2` divided by `||t||^2`.
    pub control_share: f64,
    /// Lagrangian curvature `L_zz[t, t]`.
    pub curvature: f64,
}

/// Second derivative of the Lagrangian along the tangent of one direction.
pub fn lagrangian_curvature(
    problem: &Problem,
    space: &ControlSpace,
    jac: &crate::discrete::Jacobian,
    adjoint: &AdjointState,
    controls: &ControlTriple,
    w: &CostWeights,
    dir: &[f64],
) -> Result<SecondOrderSample> {
    let d = controls.from_flat_like(dir)?;
    let t = linearized_state_with(problem, jac, &d)?;
    let vol = problem.grid.cell_volume();
    let lam1 = adjoint.lambda1.to_flat();
    let lam2 = adjoint.lambda2.as_slice();
    let ctrl = space.block_norms_sq(dir);
    let mut c_sk = 0.0;
    problem.ws.advection_entries(&t.h1, |z, v, c| c_sk += c * lam1[z] * t.h1[v]);
    let h2ext = problem.theta_ext(&t.h2, &t.tau);
    let c1 = problem.temperature_advection_form(&t.h1, &h2ext, lam2);
    let curvature = w.gamma1 * problem.curl_norm_sq(&t.h1)
        + w.gamma2 * problem.velocity_l2_sq(&t.h1)
        + w.gamma3 * vol * t.h2.iter().map(|v| v * v).sum::<f64>()
        + w.gamma4 * ctrl[0]
        + w.gamma5 * ctrl[1]
        + w.gamma6 * ctrl[2]
        - 2.0 * c_sk
        - 2.0 * c1;
    let control_sq: f64 = ctrl.iter().sum();
    let total = problem.velocity_h1_norm(&t.h1).powi(2) + problem.scalar_h1_norm(&t.h2).powi(2) + control_sq;
    Ok(SecondOrderSample { quotient: curvature / total, control_share: control_sq / total, curvature })
}

/// Lagrangian curvature quotients over `samples` seeded random directions.
pub fn second_order_samples(
    problem: &Problem,
    state: &StateSolution,
    adjoint: &AdjointState,
    controls: &ControlTriple,
    w: &CostWeights,
    samples: usize,
    seed: u64,
) -> Result<Vec<SecondOrderSample>> {
    let space = ControlSpace::new(problem)?;
    let (_, _, jac) = linearize(problem, state, controls)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .map(|_| {
            let dir = space.random_direction(&mut rng);
            lagrangian_curvature(problem, &space, &jac, adjoint, controls, w, &dir)
        })
        .collect()
}

pub fn second_order_quotient(
    problem: &Problem,
    state: &StateSolution,
    adjoint: &AdjointState,
    controls: &ControlTriple,
    w: &CostWeights,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let s = second_order_samples(problem, state, adjoint, controls, w, samples, seed)?;
    Ok(s.iter().map(|x| x.quotient).fold(f64::INFINITY, f64::min))
}

/// `(||l1||_1^2 + ||l2||_1^2, C1 / beta0 * M)` with
/// `M = g1^2/Pr ||u||_1^2 + g2^2/Pr ||u - u_d||^2 + g3^2 ||theta - theta_d||^2`.
pub fn multiplier_bound_check(
    problem: &Problem,
    state: &StateSolution,
    adjoint: &AdjointState,
    targets: &Targets,
    w: &CostWeights,
    beta0: f64,
    c1_ref: f64,
) -> Result<(f64, f64)> {
    if !(beta0 > 0.0) {
        return Err(Error::InvalidParams(format!("beta0 must be positive, got {beta0}")));
    }
    targets.check(&problem.grid)?;
    let lam1 = adjoint.lambda1.to_flat();
    let lhs = problem.velocity_h1_norm(&lam1).powi(2) + problem.scalar_h1_norm(adjoint.lambda2.as_slice()).powi(2);
    let s = FlatState::from_solution(state);
    let pr = problem.params.pr;
    let du: Vec<f64> = s.u.iter().zip(targets.u_d.to_flat()).map(|(a, b)| a - b).collect();
    let dt: f64 = s.theta.iter().zip(targets.theta_d.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        * problem.grid.cell_volume();
    let m = w.gamma1.powi(2) / pr * problem.velocity_h1_norm(&s.u).powi(2)
        + w.gamma2.powi(2) / pr * problem.velocity_l2_sq(&du)
        + w.gamma3.powi(2) * dt;
    Ok((lhs, c1_ref / beta0 * m))
}
