//! Scenario configuration read from TOML.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rbm_core::adjoint_solver::Targets;
use rbm_core::controls::{ConstraintSet, ControlSets, ControlTriple};
use rbm_core::discrete::Problem;
use rbm_core::grid::{BoundaryField, GramKind, Wall};
use rbm_core::identities::Corruption;
use rbm_core::optimizer::OptimizerOptions;
use rbm_core::params::ControlMode;
use rbm_core::state_solver::PicardOptions;
use rbm_core::{nondimensionalize, BoxGrid, ControlPartition, CostWeights, NondimParams, PhysicalParams};
use rbm_core::{ScalarField, VelocityField};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub lx: f64,
    pub ly: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { nx: 12, ny: 12, nz: 12, lx: 1.0, ly: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsConfig {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub gamma4: f64,
    pub gamma5: f64,
    pub gamma6: f64,
    pub mode: ControlMode,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        Self { gamma1: 1.0, gamma2: 1.0, gamma3: 1.0, gamma4: 1e-2, gamma5: 1e-2, gamma6: 1e-2, mode: ControlMode::Regularized }
    }
}

impl WeightsConfig {
    pub fn weights(&self) -> CostWeights {
        CostWeights {
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            gamma3: self.gamma3,
            gamma4: self.gamma4,
            gamma5: self.gamma5,
            gamma6: self.gamma6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialControls {
    /// Conduction data: `g = 0`, `phi1 = 0`, `phi2 = theta_c`.
    Conduction,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlsConfig {
    pub initial: InitialControls,
    /// Amplitude of a smooth tangential wall motion added to `g`.
    pub g_bump: f64,
    /// Uniform offset added to `phi1`.
    pub phi1_offset: f64,
    /// Uniform offset added to `phi2`.
    pub phi2_offset: f64,
    /// Walls carrying the velocity control; the rest of the no-slip
    /// boundary carries the fixed data `u0`.
    pub gamma01: Vec<String>,
    /// Amplitude of the tangential fixed wall velocity `u0`.
    pub u0_amplitude: f64,
    pub g_set: ConstraintSet,
    pub phi1_set: ConstraintSet,
    pub phi2_set: ConstraintSet,
}

impl Default for ControlsConfig {
    fn default() -> Self {
        Self {
            initial: InitialControls::Conduction,
            g_bump: 0.0,
            phi1_offset: 0.0,
            phi2_offset: 0.0,
            gamma01: ["x_lo", "x_hi", "y_lo", "y_hi"].map(String::from).to_vec(),
            u0_amplitude: 0.0,
            g_set: ConstraintSet::Unbounded,
            phi1_set: ConstraintSet::Unbounded,
            phi2_set: ConstraintSet::Unbounded,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    BasicState,
    Zero,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetsConfig {
    pub kind: TargetKind,
    /// CSV with columns `component,i,j,k,value` per velocity node.
    pub velocity_path: Option<PathBuf>,
    /// CSV with columns `i,j,k,theta` per cell.
    pub temperature_path: Option<PathBuf>,
}

impl Default for TargetsConfig {
    fn default() -> Self {
        Self { kind: TargetKind::BasicState, velocity_path: None, temperature_path: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    H12,
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub picard_tol: f64,
    pub max_iters: usize,
    pub damping: f64,
    pub apriori_c: f64,
    pub linear_tol: f64,
    pub boundary_norm: NormKind,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let p = PicardOptions::default();
        Self {
            picard_tol: p.tol,
            max_iters: p.max_iters,
            damping: p.damping,
            apriori_c: p.apriori_c,
            linear_tol: 1e-12,
            boundary_norm: NormKind::H12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub armijo_c1: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub initial_step: f64,
    /// Picard tolerance of the state solves inside the optimizer.
    pub state_tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let o = OptimizerOptions::default();
        Self {
            tol: o.tol,
            max_iters: o.max_iters,
            seed: o.seed,
            armijo_c1: o.armijo_c1,
            backtrack: o.backtrack,
            max_backtracks: o.max_backtracks,
            initial_step: o.initial_step,
            state_tol: o.picard.tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    pub uniqueness_c_ref: f64,
    pub beta0_c_ref: f64,
    pub c1_ref: f64,
    pub second_order_samples: usize,
    pub vi_samples: usize,
    pub identity_samples: usize,
    /// Test hook: deliberately break a stencil in `verify`.
    pub corrupt: Option<Corruption>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            uniqueness_c_ref: 1.0,
            beta0_c_ref: 1.0,
            c1_ref: 1.0,
            second_order_samples: 0,
            vi_samples: 0,
            identity_samples: 20,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub vtk: bool,
    pub csv: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), vtk: true, csv: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// One of `pr`, `ra`, `ma`, `bi`, `b`.
    pub axis: Option<String>,
    pub values: Vec<f64>,
    pub threads: Option<usize>,
}

/// Complete scenario. Every section and key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub grid: GridConfig,
    pub params: Option<NondimParams>,
    pub physical: Option<PhysicalParams>,
    pub weights: WeightsConfig,
    pub controls: ControlsConfig,
    pub targets: TargetsConfig,
    pub solver: SolverConfig,
    pub optimizer: OptimizerConfig,
    pub diagnostics: DiagnosticsConfig,
    pub output: OutputConfig,
    pub sweep: SweepConfig,
}

fn wall_from_name(name: &str) -> Result<Wall, CliError> {
    Ok(match name {
        "x_lo" => Wall::XLo,
        "x_hi" => Wall::XHi,
        "y_lo" => Wall::YLo,
        "y_hi" => Wall::YHi,
        "bottom" => Wall::Bottom,
        other => return Err(CliError::Config(format!("unknown wall `{other}` in controls.gamma01"))),
    })
}

fn invalid(e: rbm_core::Error) -> CliError {
    CliError::Config(e.to_string())
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.targets.velocity_path, &mut cfg.targets.temperature_path].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn nondim(&self) -> Result<NondimParams, CliError> {
        let p = match (&self.params, &self.physical) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config("give either [params] or [physical], not both".into()));
            }
            (Some(p), None) => *p,
            (None, Some(ph)) => nondimensionalize(ph).map_err(invalid)?,
            (None, None) => NondimParams::default(),
        };
        p.validate().map_err(invalid)?;
        Ok(p)
    }

    pub fn grid(&self) -> Result<BoxGrid, CliError> {
        let g = &self.grid;
        BoxGrid::new(g.nx, g.ny, g.nz, g.lx, g.ly).map_err(invalid)
    }

    pub fn picard(&self) -> PicardOptions {
        let s = &self.solver;
        PicardOptions { tol: s.picard_tol, max_iters: s.max_iters, damping: s.damping, apriori_c: s.apriori_c }
    }

    pub fn optimizer_options(&self) -> OptimizerOptions {
        let o = &self.optimizer;
        OptimizerOptions {
            tol: o.tol,
            max_iters: o.max_iters,
            seed: o.seed,
            armijo_c1: o.armijo_c1,
            backtrack: o.backtrack,
            max_backtracks: o.max_backtracks,
            initial_step: o.initial_step,
            picard: PicardOptions { tol: o.state_tol, ..self.picard() },
        }
    }

    pub fn sets(&self) -> ControlSets {
        let c = &self.controls;
        ControlSets { g: c.g_set, phi1: c.phi1_set, phi2: c.phi2_set }
    }

    /// Checks everything that does not need a grid solve.
    pub fn validate(&self) -> Result<(), CliError> {
        self.nondim()?;
        self.grid()?;
        let w = self.weights.weights();
        w.validate(self.weights.mode).map_err(invalid)?;
        let sets = self.sets();
        sets.validate().map_err(invalid)?;
        if self.weights.mode == ControlMode::BoundedSets && !sets.all_bounded() {
            return Err(CliError::Config("mode \"i\" requires bounded sets for g, phi1 and phi2".into()));
        }
        self.picard().validate().map_err(invalid)?;
        if !(self.solver.linear_tol > 0.0) {
            return Err(CliError::Config("solver.linear_tol must be positive".into()));
        }
        if !(self.optimizer.tol > 0.0 && self.optimizer.backtrack > 0.0 && self.optimizer.backtrack < 1.0) {
            return Err(CliError::Config("optimizer.tol must be positive and backtrack in (0, 1)".into()));
        }
        let d = &self.diagnostics;
        if !(d.uniqueness_c_ref > 0.0 && d.beta0_c_ref > 0.0 && d.c1_ref > 0.0) {
            return Err(CliError::Config("diagnostic reference constants must be positive".into()));
        }
        for w in &self.controls.gamma01 {
            wall_from_name(w)?;
        }
        if self.targets.kind == TargetKind::File {
            for (key, p) in [("velocity_path", &self.targets.velocity_path), ("temperature_path", &self.targets.temperature_path)] {
                match p {
                    None => return Err(CliError::Config(format!("targets.{key} is required for file targets"))),
                    Some(p) if !p.is_file() => {
                        return Err(CliError::Config(format!("targets.{key}: {} does not exist", p.display())));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn partition(&self, grid: &BoxGrid) -> Result<ControlPartition, CliError> {
        let walls: Vec<Wall> = self.controls.gamma01.iter().map(|w| wall_from_name(w)).collect::<Result<_, _>>()?;
        let gamma0 = grid.region(rbm_core::RegionTag::Gamma0);
        let mask = gamma0.faces.iter().map(|f| walls.contains(&f.wall)).collect();
        ControlPartition::new(grid, mask).map_err(invalid)
    }

    pub fn problem_with(&self, params: NondimParams) -> Result<Problem, CliError> {
        let grid = self.grid()?;
        let part = self.partition(&grid)?;
        let amp = self.controls.u0_amplitude;
        let u0 = match (&part.gamma02, amp) {
            (Some(region), a) if a != 0.0 => Some(BoundaryField::from_fn(region.clone(), 3, |f| tangential_profile(f, a, [grid.lx, grid.ly, 1.0]))),
            _ => None,
        };
        let mut prob = Problem::new(grid, params, part, u0).map_err(invalid)?;
        prob.linear.rel_tol = self.solver.linear_tol;
        if self.solver.boundary_norm == NormKind::L2 {
            prob.set_gram_kind(GramKind::L2);
        }
        Ok(prob)
    }

    pub fn problem(&self) -> Result<Problem, CliError> {
        self.problem_with(self.nondim()?)
    }

    pub fn initial_controls(&self, prob: &Problem) -> Result<ControlTriple, CliError> {
        let c = &self.controls;
        let mut ct = match c.initial {
            InitialControls::Conduction => prob.conduction_controls(),
            InitialControls::Zero => prob.zero_controls(),
        };
        if c.g_bump != 0.0 {
            for (n, f) in ct.g.region.faces.clone().iter().enumerate() {
                let v = tangential_profile(f, c.g_bump, [prob.grid.lx, prob.grid.ly, 1.0]);
                ct.g.values[n * 3..n * 3 + 3].copy_from_slice(&v);
            }
        }
        ct.phi1.values.iter_mut().for_each(|v| *v += c.phi1_offset);
        ct.phi2.values.iter_mut().for_each(|v| *v += c.phi2_offset);
        let ct = ct.with_sets(self.sets());
        prob.check_controls(&ct).map_err(invalid)?;
        Ok(ct)
    }

    pub fn targets(&self, prob: &Problem) -> Result<Targets, CliError> {
        match self.targets.kind {
            TargetKind::BasicState => Targets::basic_state(&prob.grid, &prob.params).map_err(invalid),
            TargetKind::Zero => Ok(Targets::zero(&prob.grid)),
            TargetKind::File => {
                let vp = self.targets.velocity_path.as_deref().ok_or_else(|| CliError::Config("missing velocity_path".into()))?;
                let tp =
                    self.targets.temperature_path.as_deref().ok_or_else(|| CliError::Config("missing temperature_path".into()))?;
                let t = Targets { u_d: read_velocity(&prob.grid, vp)?, theta_d: read_temperature(&prob.grid, tp)? };
                t.check(&prob.grid).map_err(invalid)?;
                Ok(t)
            }
        }
    }
}

/// Smooth tangential wall motion vanishing on the edges of its wall,
/// directed along the horizontal tangent.
fn tangential_profile(f: &rbm_core::grid::BoundaryFace, amp: f64, len: [f64; 3]) -> Vec<f64> {
    let (a, b) = f.wall.tangential_axes();
    let x = f.centroid;
    let shape = (PI * x[a] / len[a]).sin() * (PI * x[b] / len[b]).sin();
    let mut v = vec![0.0; 3];
    v[if a == 2 { b } else { a }] = amp * shape;
    v
}

#[derive(Deserialize)]
struct VelocityRow {
    component: usize,
    i: usize,
    j: usize,
    k: usize,
    value: f64,
}

#[derive(Deserialize)]
struct TemperatureRow {
    i: usize,
    j: usize,
    k: usize,
    theta: f64,
}

fn csv_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

fn read_velocity(grid: &BoxGrid, path: &Path) -> Result<VelocityField, CliError> {
    let mut v = VelocityField::zeros(grid);
    let mut rd = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rd.deserialize::<VelocityRow>() {
        let r = row.map_err(|e| csv_error(path, e))?;
        let slot = (1..=3)
            .contains(&r.component)
            .then(|| v.c[r.component - 1].get_mut([r.i, r.j, r.k]))
            .flatten()
            .ok_or_else(|| csv_error(path, format!("node ({}, {}, {}, {}) outside the grid", r.component, r.i, r.j, r.k)))?;
        *slot = r.value;
    }
    Ok(v)
}

fn read_temperature(grid: &BoxGrid, path: &Path) -> Result<ScalarField, CliError> {
    let mut s = ScalarField::zeros(grid);
    let mut seen: BTreeMap<(usize, usize, usize), ()> = BTreeMap::new();
    let mut rd = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rd.deserialize::<TemperatureRow>() {
        let r = row.map_err(|e| csv_error(path, e))?;
        let slot = s
            .data
            .get_mut([r.i, r.j, r.k])
            .ok_or_else(|| csv_error(path, format!("cell ({}, {}, {}) outside the grid", r.i, r.j, r.k)))?;
        *slot = r.theta;
        seen.insert((r.i, r.j, r.k), ());
    }
    if seen.len() != grid.ncells() {
        return Err(csv_error(path, format!("{} of {} cells given", seen.len(), grid.ncells())));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_default_scenario() {
        let c = ScenarioConfig::from_toml("").unwrap();
        assert_eq!(c, ScenarioConfig::default());
        c.validate().unwrap();
        assert_eq!(c.nondim().unwrap(), NondimParams::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let text = r#"
            [grid]
            nx = 6
            ny = 5
            nz = 4
            [params]
            pr = 2.0
            ra = 0.5
            b = -1.0
            ma = 0.25
            bi = 2.0
            lx = 1.0
            ly = 1.0
            theta_c = 1.0
            [controls]
            g_set = { kind = "box", lo = -1.0, hi = 1.0 }
        "#;
        let c = ScenarioConfig::from_toml(text).unwrap();
        assert_eq!(c.controls.g_set, ConstraintSet::Box { lo: -1.0, hi: 1.0 });
        assert_eq!(ScenarioConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_scenarios() {
        assert!(ScenarioConfig::from_toml("[grid]\nnx = \"many\"").is_err());
        assert!(ScenarioConfig::from_toml("[grid]\nwidth = 3").is_err());
        let c = ScenarioConfig::from_toml("[weights]\ngamma4 = 0.0").unwrap();
        assert!(c.validate().is_err());
        let c = ScenarioConfig::from_toml("[weights]\nmode = \"i\"").unwrap();
        assert!(c.validate().is_err());
        let c = ScenarioConfig::from_toml("[targets]\nkind = \"file\"\nvelocity_path = \"/nonexistent\"").unwrap();
        assert!(c.validate().is_err());
        let c = ScenarioConfig::from_toml("[physical]\nrho0 = 1.0").unwrap_err();
        assert!(matches!(c, CliError::Config(_)));
    }

    #[test]
    fn physical_block_is_nondimensionalized() {
        let text = r#"
            [physical]
            rho0 = 1.0
            mu = 1.0
            k_cond = 1.0
            cp = 1.0
            alpha = 1.0
            gamma_sigma = 1.0
            g_mag = 1.0
            h_exch = 1.0
            d = 1.0
            l1 = 1.0
            big_l1 = 1.0
            theta_c = 2.0
            theta_a = 1.0
        "#;
        let p = ScenarioConfig::from_toml(text).unwrap().nondim().unwrap();
        assert_eq!((p.pr, p.ra, p.b, p.ma, p.bi), (1.0, 1.0, -1.0, 1.0, 1.0));
    }

    #[test]
    fn bumped_controls_are_admissible() {
        let c = ScenarioConfig::from_toml("[grid]\nnx = 5\nny = 5\nnz = 5\n[controls]\ng_bump = 0.3\nu0_amplitude = 0.1\ngamma01 = [\"x_lo\", \"y_hi\"]")
            .unwrap();
        let prob = c.problem().unwrap();
        let ct = c.initial_controls(&prob).unwrap();
        assert!(ct.g.max_abs() > 0.0);
        assert!(prob.u0.is_some());
    }
}
