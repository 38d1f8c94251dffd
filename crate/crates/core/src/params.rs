//! Physical and nondimensional parameters of the convection problem.
//!
//! All downstream modules consume [`NondimParams`]; [`PhysicalParams`] only
//! exists to derive them through the standard Boussinesq scaling with the
//! layer height as length scale and `theta_c - theta_a` as temperature scale.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dimensional fluid and container data (SI-consistent units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Mean density.
    pub rho0: f64,
    /// Dynamic viscosity.
    pub mu: f64,
    /// Thermal conductivity.
    pub k_cond: f64,
    /// Heat capacity per unit mass.
    pub cp: f64,
    /// Thermal expansion coefficient.
    pub alpha: f64,
    /// Rate of change of surface tension with temperature.
    pub gamma_sigma: f64,
    /// Magnitude of gravity.
    pub g_mag: f64,
    /// Heat exchange coefficient of the free surface.
    pub h_exch: f64,
    /// Layer height.
    pub d: f64,
    /// Horizontal extent along x1.
    pub l1: f64,
    /// Horizontal extent along x2.
    pub big_l1: f64,
    /// Bottom temperature.
    pub theta_c: f64,
    /// Ambient temperature.
    pub theta_a: f64,
}

/// Dimensionless coefficients of the stationary system on
/// `(0, lx) x (0, ly) x (0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NondimParams {
    /// Prandtl number.
    pub pr: f64,
    /// Rayleigh number.
    pub ra: f64,
    /// Gravity constant (nonpositive when derived).
    pub b: f64,
    /// Marangoni number.
    pub ma: f64,
    /// Biot number.
    pub bi: f64,
    pub lx: f64,
    pub ly: f64,
    /// Bottom temperature in scaled units (1 when derived).
    pub theta_c: f64,
}

impl Default for NondimParams {
    fn default() -> Self {
        Self {
            pr: 10.0,
            ra: 0.1,
            b: -1.0,
            ma: 0.1,
            bi: 1.0,
            lx: 1.0,
            ly: 1.0,
            theta_c: 1.0,
        }
    }
}

impl NondimParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.pr, self.ra, self.b, self.ma, self.bi, self.lx, self.ly, self.theta_c];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite coefficient".into()));
        }
        if self.pr <= 0.0 {
            return Err(Error::InvalidParams(format!("Pr must be positive, got {}", self.pr)));
        }
        if self.bi <= 0.0 {
            return Err(Error::InvalidParams(format!("B must be positive, got {}", self.bi)));
        }
        if self.lx <= 0.0 || self.ly <= 0.0 {
            return Err(Error::InvalidParams("horizontal extents must be positive".into()));
        }
        if self.ra < 0.0 || self.ma < 0.0 {
            return Err(Error::InvalidParams("R and M must be nonnegative".into()));
        }
        Ok(())
    }

    /// Conduction temperature at height `z`.
    pub fn basic_temperature(&self, z: f64) -> f64 {
        self.theta_c - self.theta_c * self.bi / (1.0 + self.bi) * z
    }

    /// `(p1, p2)` of the conduction pressure `p1 z + p2 z^2`.
    pub fn basic_pressure_coefficients(&self) -> (f64, f64) {
        let p1 = self.b + self.ra * self.theta_c;
        let p2 = -self.ra * self.theta_c * self.bi / (2.0 * (1.0 + self.bi));
        (p1, p2)
    }
}

/// Applies the change of variables `x' = x/d`, `u' = d u / kappa`,
/// `theta' = (theta - theta_a)/theta_u`, `p' = d^2 p / (rho0 nu kappa)`.
pub fn nondimensionalize(p: &PhysicalParams) -> Result<NondimParams> {
    let positive = [
        ("rho0", p.rho0),
        ("mu", p.mu),
        ("k_cond", p.k_cond),
        ("cp", p.cp),
        ("alpha", p.alpha),
        ("gamma_sigma", p.gamma_sigma),
        ("g_mag", p.g_mag),
        ("h_exch", p.h_exch),
        ("d", p.d),
        ("l1", p.l1),
        ("big_l1", p.big_l1),
    ];
    for (name, v) in positive {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
        }
    }
    if !(p.theta_c.is_finite() && p.theta_a.is_finite()) {
        return Err(Error::InvalidParams("temperatures must be finite".into()));
    }
    let theta_u = p.theta_c - p.theta_a;
    if theta_u < 0.0 {
        return Err(Error::InvalidParams(format!(
            "bottom temperature {} below ambient {}",
            p.theta_c, p.theta_a
        )));
    }
    let kappa = p.k_cond / (p.rho0 * p.cp);
    let nu = p.mu / p.rho0;
    let d3 = p.d * p.d * p.d;
    Ok(NondimParams {
        pr: nu / kappa,
        ra: p.g_mag * p.alpha * theta_u * d3 / (kappa * nu),
        b: -p.g_mag * d3 / (kappa * nu),
        ma: p.gamma_sigma * theta_u * p.d / (p.rho0 * nu * kappa),
        bi: p.h_exch * p.d / p.k_cond,
        lx: p.l1 / p.d,
        ly: p.big_l1 / p.d,
        theta_c: 1.0,
    })
}

/// Which admissibility regime the cost weights are used in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ControlMode {
    /// Nonnegative regularization, bounded control sets.
    #[serde(rename = "i")]
    BoundedSets,
    /// Strictly positive regularization, sets may be unbounded.
    #[serde(rename = "ii")]
    #[default]
    Regularized,
}

/// Weights of the six cost terms: vorticity, velocity tracking,
/// temperature tracking, and the three control norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct CostWeights {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub gamma4: f64,
    pub gamma5: f64,
    pub gamma6: f64,
}

impl CostWeights {
    pub fn as_array(&self) -> [f64; 6] {
        [self.gamma1, self.gamma2, self.gamma3, self.gamma4, self.gamma5, self.gamma6]
    }

    pub fn min_control_weight(&self) -> f64 {
        self.gamma4.min(self.gamma5).min(self.gamma6)
    }

    /// Checks the weights against an admissibility regime. Downstream
    /// routines accept unvalidated weights so degenerate diagnostics
    /// (all tracking weights zero) stay computable.
    pub fn validate(&self, mode: ControlMode) -> Result<()> {
        let w = self.as_array();
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParams("cost weights must be finite and nonnegative".into()));
        }
        if self.gamma1 == 0.0 && self.gamma2 == 0.0 && self.gamma3 == 0.0 {
            return Err(Error::InvalidParams(
                "gamma1, gamma2, gamma3 must not all vanish".into(),
            ));
        }
        if mode == ControlMode::Regularized && self.min_control_weight() <= 0.0 {
            return Err(Error::InvalidParams(
                "mode (ii) requires gamma4, gamma5, gamma6 > 0".into(),
            ));
        }
        Ok(())
    }
}
